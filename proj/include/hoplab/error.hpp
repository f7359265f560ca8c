// Copyright 2026 The Hoplab Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef HOPLAB_ERROR_HPP_
#define HOPLAB_ERROR_HPP_

#include <stdexcept>
#include <string>

namespace hoplab {

// Every failure raised by the library derives from Error. The kind maps
// one-to-one onto the status codes of the C API.
enum class ErrorKind {
  kInvalidArgument,
  kInfeasible,
  kIo,
  kFormat,
  kDependency,
  kDivergence,
  kInternal,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

inline Error InvalidArgument(const std::string& what) {
  return Error(ErrorKind::kInvalidArgument, what);
}
inline Error Infeasible(const std::string& what) {
  return Error(ErrorKind::kInfeasible, what);
}
inline Error IoError(const std::string& what) {
  return Error(ErrorKind::kIo, what);
}
inline Error FormatError(const std::string& what) {
  return Error(ErrorKind::kFormat, what);
}

}  // namespace hoplab

#endif  // HOPLAB_ERROR_HPP_
