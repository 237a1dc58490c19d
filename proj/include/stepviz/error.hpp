#pragma once

#include <stdexcept>
#include <string>

namespace stepviz {

// Coarse failure class; the CLI maps these onto process exit codes.
enum class ErrorClass {
  validation,  // exit 2
  adapter,     // exit 3
  backend,     // exit 4
};

class Error : public std::runtime_error {
 public:
  Error(ErrorClass cls, std::string kind, const std::string& what)
      : std::runtime_error(kind + ": " + what), cls_(cls), kind_(std::move(kind)) {}

  ErrorClass error_class() const noexcept { return cls_; }
  const std::string& kind() const noexcept { return kind_; }

 private:
  ErrorClass cls_;
  std::string kind_;
};

#define STEPVIZ_DEFINE_ERROR(Name, Class)                                     \
  class Name : public Error {                                                 \
   public:                                                                    \
    explicit Name(const std::string& what) : Error(ErrorClass::Class, #Name, what) {} \
  };

STEPVIZ_DEFINE_ERROR(PreconditionViolation, validation)
STEPVIZ_DEFINE_ERROR(MalformedResponse, validation)
STEPVIZ_DEFINE_ERROR(SchemaViolation, validation)
STEPVIZ_DEFINE_ERROR(ParseError, validation)
STEPVIZ_DEFINE_ERROR(ShapeMismatch, validation)
STEPVIZ_DEFINE_ERROR(IndexOutOfRange, validation)
STEPVIZ_DEFINE_ERROR(ConfigError, validation)
STEPVIZ_DEFINE_ERROR(ClientError, adapter)
STEPVIZ_DEFINE_ERROR(AdapterError, adapter)
STEPVIZ_DEFINE_ERROR(ImageFormatError, adapter)
STEPVIZ_DEFINE_ERROR(BackendError, backend)
STEPVIZ_DEFINE_ERROR(PromptTooLong, backend)
STEPVIZ_DEFINE_ERROR(UnsupportedBackend, backend)

#undef STEPVIZ_DEFINE_ERROR

// Wraps a module error with the pipeline phase it came from, keeping its class.
class PhaseError : public Error {
 public:
  PhaseError(const std::string& phase, const Error& inner)
      : Error(inner.error_class(), inner.kind(), "[" + phase + "] " + inner.what()),
        phase_(phase) {}

  const std::string& phase() const noexcept { return phase_; }

 private:
  std::string phase_;
};

inline int exit_code_for(ErrorClass cls) {
  switch (cls) {
    case ErrorClass::validation: return 2;
    case ErrorClass::adapter: return 3;
    case ErrorClass::backend: return 4;
  }
  return 1;
}

}  // namespace stepviz
