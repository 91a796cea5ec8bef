#pragma once

#include <stdexcept>
#include <string>

namespace teachclip {

/// Base of every error raised by the library. `kind()` is a short stable
/// token used by the CLI for its single-line error report and exit code.
class Error : public std::runtime_error {
 public:
  Error(std::string kind, const std::string& what)
      : std::runtime_error(what), kind_(std::move(kind)) {}

  const std::string& kind() const noexcept { return kind_; }

 private:
  std::string kind_;
};

#define TEACHCLIP_DEFINE_ERROR(Name, token)                        \
  class Name : public Error {                                      \
   public:                                                         \
    explicit Name(const std::string& what) : Error(token, what) {} \
  };

TEACHCLIP_DEFINE_ERROR(InvalidInput, "invalid-input")
TEACHCLIP_DEFINE_ERROR(InvalidShape, "invalid-shape")
TEACHCLIP_DEFINE_ERROR(DegenerateInput, "degenerate-input")
TEACHCLIP_DEFINE_ERROR(ProbeFailure, "probe-failure")
TEACHCLIP_DEFINE_ERROR(UnsupportedCorpus, "unsupported-corpus")
TEACHCLIP_DEFINE_ERROR(InvalidConfig, "invalid-config")
TEACHCLIP_DEFINE_ERROR(InvalidManifest, "invalid-manifest")
TEACHCLIP_DEFINE_ERROR(CorpusIntegrity, "corpus-integrity")
TEACHCLIP_DEFINE_ERROR(InvalidCorpus, "invalid-corpus")
TEACHCLIP_DEFINE_ERROR(InvalidEval, "invalid-eval")
TEACHCLIP_DEFINE_ERROR(InvalidSpec, "invalid-spec")
TEACHCLIP_DEFINE_ERROR(IoError, "io-error")
TEACHCLIP_DEFINE_ERROR(NonFiniteGradient, "non-finite-gradient")

#undef TEACHCLIP_DEFINE_ERROR

}  // namespace teachclip
