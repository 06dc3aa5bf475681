#pragma once

#include <stdexcept>
#include <string>

namespace xmodal {

/// Base of every error raised by the library. `kind()` is a stable tag that
/// the CLI maps to exit codes and tests match on.
class Error : public std::runtime_error {
public:
    Error(std::string kind, const std::string& what)
        : std::runtime_error(kind + ": " + what), kind_(std::move(kind)) {}

    const std::string& kind() const noexcept { return kind_; }

private:
    std::string kind_;
};

#define XMODAL_DEFINE_ERROR(Name)                                        \
    class Name : public Error {                                          \
    public:                                                              \
        explicit Name(const std::string& what) : Error(#Name, what) {}   \
    }

XMODAL_DEFINE_ERROR(NearZeroNorm);
XMODAL_DEFINE_ERROR(DimensionMismatch);
XMODAL_DEFINE_ERROR(InvalidLabel);
XMODAL_DEFINE_ERROR(NoValidClass);
XMODAL_DEFINE_ERROR(ConflictingFlags);
XMODAL_DEFINE_ERROR(NonFiniteLoss);
XMODAL_DEFINE_ERROR(BadConfig);
XMODAL_DEFINE_ERROR(IoError);
XMODAL_DEFINE_ERROR(FormatError);
XMODAL_DEFINE_ERROR(VersionMismatch);
XMODAL_DEFINE_ERROR(InsufficientData);
XMODAL_DEFINE_ERROR(DivergenceDetected);
XMODAL_DEFINE_ERROR(EmptyGallery);
XMODAL_DEFINE_ERROR(EmptyModality);
XMODAL_DEFINE_ERROR(BadArgs);

#undef XMODAL_DEFINE_ERROR

}  // namespace xmodal
