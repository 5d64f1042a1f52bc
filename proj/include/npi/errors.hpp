#pragma once

#include <stdexcept>
#include <string>

namespace npi {

// Base for every error raised by the library. `kind()` is the machine-readable
// tag the CLI puts in its error JSON.
class Error : public std::runtime_error {
 public:
  Error(std::string kind, const std::string& what)
      : std::runtime_error(what), kind_(std::move(kind)) {}
  const std::string& kind() const noexcept { return kind_; }

 private:
  std::string kind_;
};

#define NPI_DEFINE_ERROR(Name, tag)                                  \
  class Name : public Error {                                        \
   public:                                                           \
    explicit Name(const std::string& what) : Error(tag, what) {}     \
  };

NPI_DEFINE_ERROR(DimensionError, "dimension")
NPI_DEFINE_ERROR(ContractError, "contract")
NPI_DEFINE_ERROR(DomainError, "domain")
NPI_DEFINE_ERROR(NumericError, "numeric")
NPI_DEFINE_ERROR(ConfigError, "config")
NPI_DEFINE_ERROR(ContextError, "context")
NPI_DEFINE_ERROR(DataError, "data")
NPI_DEFINE_ERROR(FormatError, "format")
NPI_DEFINE_ERROR(InjectionError, "injection")
NPI_DEFINE_ERROR(PairingError, "pairing")
NPI_DEFINE_ERROR(UndefinedError, "undefined")
NPI_DEFINE_ERROR(GateError, "gate")
NPI_DEFINE_ERROR(DigestError, "digest")
NPI_DEFINE_ERROR(TrainingAborted, "training_aborted")

#undef NPI_DEFINE_ERROR

}  // namespace npi
