#pragma once

#include <stdexcept>
#include <string>

namespace casa {

// Base for all library errors. `kind()` is a stable machine-readable tag
// used by the CLI when emitting error JSON.
class Error : public std::runtime_error {
public:
    Error(std::string kind, const std::string& message)
        : std::runtime_error(message), kind_(std::move(kind)) {}

    const std::string& kind() const noexcept { return kind_; }

private:
    std::string kind_;
};

#define CASA_DEFINE_ERROR(NAME)                                   \
    class NAME : public Error {                                   \
    public:                                                       \
        explicit NAME(const std::string& message)                 \
            : Error(#NAME, message) {}                            \
    }

CASA_DEFINE_ERROR(FormatError);     // malformed checkpoint structure
CASA_DEFINE_ERROR(DataError);       // non-finite tensor contents
CASA_DEFINE_ERROR(IoError);         // filesystem failures
CASA_DEFINE_ERROR(PairingError);    // incomplete/mismatched LoRA factors
CASA_DEFINE_ERROR(ShapeError);      // dimension mismatch between operands
CASA_DEFINE_ERROR(NumericalError);  // decomposition failure
CASA_DEFINE_ERROR(DegenerateError); // operation undefined on this input
CASA_DEFINE_ERROR(KeyError);        // missing layer key
CASA_DEFINE_ERROR(UsageError);      // bad CLI/manifest input

#undef CASA_DEFINE_ERROR

} // namespace casa
