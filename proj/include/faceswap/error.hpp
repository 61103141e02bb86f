#ifndef FACESWAP_ERROR_HPP
#define FACESWAP_ERROR_HPP

#include <stdexcept>
#include <string>

namespace fswap {

// Every failure the library reports carries a stable kind name
// (e.g. "ShapeMismatch", "SingularTransform") next to the message.
class Error : public std::runtime_error {
public:
    Error(std::string kind, const std::string& message)
        : std::runtime_error(kind + ": " + message), kind_(std::move(kind)) {}

    const std::string& kind() const noexcept { return kind_; }

private:
    std::string kind_;
};

#define FSWAP_DEFINE_ERROR(Name)                                            \
    class Name : public Error {                                             \
    public:                                                                 \
        explicit Name(const std::string& message) : Error(#Name, message) {} \
    };

FSWAP_DEFINE_ERROR(ShapeMismatch)
FSWAP_DEFINE_ERROR(ConfigMismatch)
FSWAP_DEFINE_ERROR(DegenerateConfiguration)
FSWAP_DEFINE_ERROR(SingularTransform)
FSWAP_DEFINE_ERROR(MissingEyeLandmarks)
FSWAP_DEFINE_ERROR(MissingOutlineLandmarks)
FSWAP_DEFINE_ERROR(DegenerateOutline)
FSWAP_DEFINE_ERROR(ZeroTargetWidth)
FSWAP_DEFINE_ERROR(NonNormalizedInput)
FSWAP_DEFINE_ERROR(NonFiniteTerm)
FSWAP_DEFINE_ERROR(NonFiniteLoss)
FSWAP_DEFINE_ERROR(EmptyDataset)
FSWAP_DEFINE_ERROR(EmptyGallery)
FSWAP_DEFINE_ERROR(IndexMismatch)
FSWAP_DEFINE_ERROR(EstimatorUnavailable)
FSWAP_DEFINE_ERROR(NoFaceDetected)
FSWAP_DEFINE_ERROR(IoFailure)
FSWAP_DEFINE_ERROR(NotImplemented)
FSWAP_DEFINE_ERROR(InvalidArgument)

#undef FSWAP_DEFINE_ERROR

} // namespace fswap

#endif // FACESWAP_ERROR_HPP
