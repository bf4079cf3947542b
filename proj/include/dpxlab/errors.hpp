// Copyright 2026 The DPXLab Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef DPXLAB_ERRORS_HPP
#define DPXLAB_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace dpxlab {

/// Base of every error thrown by the toolkit. `kind()` is a stable,
/// machine-readable tag used by the CLI's JSON error output.
class Error : public std::runtime_error {
 public:
  Error(std::string kind, const std::string& message)
      : std::runtime_error(message), kind_(std::move(kind)) {}
  const std::string& kind() const noexcept { return kind_; }

 private:
  std::string kind_;
};

#define DPXLAB_DEFINE_ERROR(Name)                                  \
  class Name : public Error {                                      \
   public:                                                         \
    explicit Name(const std::string& message) : Error(#Name, message) {} \
  }

DPXLAB_DEFINE_ERROR(IoError);
DPXLAB_DEFINE_ERROR(FormatError);
DPXLAB_DEFINE_ERROR(CorruptError);
DPXLAB_DEFINE_ERROR(UnsupportedError);
DPXLAB_DEFINE_ERROR(NonFiniteError);
DPXLAB_DEFINE_ERROR(ManifestError);
DPXLAB_DEFINE_ERROR(ShapeError);
DPXLAB_DEFINE_ERROR(UndefinedError);
DPXLAB_DEFINE_ERROR(DegenerateKernelError);
DPXLAB_DEFINE_ERROR(ConfigError);
DPXLAB_DEFINE_ERROR(ScaleError);
DPXLAB_DEFINE_ERROR(StateError);
DPXLAB_DEFINE_ERROR(NotFoundError);
DPXLAB_DEFINE_ERROR(MissingInputError);

#undef DPXLAB_DEFINE_ERROR

}  // namespace dpxlab

#endif  // DPXLAB_ERRORS_HPP
