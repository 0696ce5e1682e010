#pragma once

#include <stdexcept>
#include <string>

namespace icelab {

// Error categories surface through the C API as status codes.
enum class ErrorKind {
  kConfig,
  kShape,
  kContract,
  kContextOverflow,
  kNumerical,
  kSize,
  kParse,
  kIo,
  kStructural,
  kInput,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

#define ICELAB_DEFINE_ERROR(Name, Kind)                                  \
  class Name : public Error {                                            \
   public:                                                               \
    explicit Name(const std::string& what) : Error(ErrorKind::Kind, what) {} \
  };

ICELAB_DEFINE_ERROR(ConfigError, kConfig)
ICELAB_DEFINE_ERROR(ShapeError, kShape)
ICELAB_DEFINE_ERROR(ContractViolation, kContract)
ICELAB_DEFINE_ERROR(ContextOverflow, kContextOverflow)
ICELAB_DEFINE_ERROR(NumericalError, kNumerical)
ICELAB_DEFINE_ERROR(SizeError, kSize)
ICELAB_DEFINE_ERROR(ParseError, kParse)
ICELAB_DEFINE_ERROR(IoError, kIo)
ICELAB_DEFINE_ERROR(StructuralError, kStructural)
ICELAB_DEFINE_ERROR(InputError, kInput)

#undef ICELAB_DEFINE_ERROR

}  // namespace icelab
