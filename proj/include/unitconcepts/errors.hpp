#pragma once

#include <stdexcept>
#include <string>

namespace uc {

/// Base of every error raised by the library. Test verdicts are never errors.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

#define UC_DEFINE_ERROR(Name)                 \
    class Name : public Error {               \
    public:                                   \
        using Error::Error;                   \
    }

UC_DEFINE_ERROR(MetadataError);
UC_DEFINE_ERROR(RenderError);
UC_DEFINE_ERROR(ConfigError);
UC_DEFINE_ERROR(FormatError);
UC_DEFINE_ERROR(DataError);
UC_DEFINE_ERROR(IoError);
UC_DEFINE_ERROR(NumericsError);
UC_DEFINE_ERROR(TrainError);
UC_DEFINE_ERROR(InputError);
UC_DEFINE_ERROR(EvalError);

#undef UC_DEFINE_ERROR

/// Raised by the pipeline; carries the failing stage name.
class StageError : public Error {
public:
    StageError(std::string stage, const std::string& cause)
        : Error("stage '" + stage + "' failed: " + cause), stage_(std::move(stage)) {}

    const std::string& stage() const noexcept { return stage_; }

private:
    std::string stage_;
};

} // namespace uc
