#ifndef FACESWAP_LOSSES_HPP
#define FACESWAP_LOSSES_HPP

#include "faceswap/geometry.hpp"
#include "faceswap/network.hpp"

#include <memory>
#include <string>
#include <utility>
#include <vector>

namespace fswap {

struct LossWeights {
    double w_id = 5.0;
    double w_adv = 1.0;
    double w_rec = 10.0;
    double w_att = 10.0;
    double w_eye = 1.0;

    void validate() const;
};

struct LossTerms {
    double id = 0;
    double adv = 0;
    double rec = 0;
    double att = 0;
    double eye = 0;
};

struct LossReport {
    LossTerms terms;
    double total = 0;
    bool same_person_flag = false;
    // Number of same-person samples in the batch behind same_person_flag.
    int same_person_count = 0;
};

// Maps a C×P×P eye patch to a feature tensor. The default is the identity
// on pixels; a keypoint network's intermediate activations can be plugged in.
template <typename Scalar>
class EyeFeatureExtractor {
public:
    virtual ~EyeFeatureExtractor() = default;
    virtual ad::Tensor<Scalar> operator()(const ad::Tensor<Scalar>& patch) const = 0;
};

template <typename Scalar>
class PixelEyeFeatures final : public EyeFeatureExtractor<Scalar> {
public:
    ad::Tensor<Scalar> operator()(const ad::Tensor<Scalar>& patch) const override { return patch; }
};

struct EyeLossSettings {
    double margin = 3.0;
    int patch_size = 16;
    std::string extractor = "pixels";
};

// 1 − cos(z_gen, z_src), averaged over the batch. Inputs are N×D×1×1 and
// must be unit-norm within 1e-3.
template <typename Scalar>
ad::Tensor<Scalar> identity_loss(const ad::Tensor<Scalar>& z_gen, const ad::Tensor<Scalar>& z_src);
double identity_loss(const IdentityVector& z_gen, const IdentityVector& z_src);

// ½ Σ_levels mean (gen − tgt)².
template <typename Scalar>
ad::Tensor<Scalar> attribute_loss(const AttributeFeatureStack<Scalar>& gen, const AttributeFeatureStack<Scalar>& tgt);

// Per sample ½ mean (y − x_t)² where same_person is set, zero otherwise;
// averaged over the batch.
template <typename Scalar>
ad::Tensor<Scalar> reconstruction_loss(const ad::Tensor<Scalar>& y, const ad::Tensor<Scalar>& x_t,
                                       const std::vector<bool>& same_person);

// Squared feature distance over both eye regions of the target landmarks,
// patches resampled to patch_size², averaged over eyes and samples.
template <typename Scalar>
ad::Tensor<Scalar> eye_loss(const ad::Tensor<Scalar>& y, const ad::Tensor<Scalar>& x_t,
                            const std::vector<Landmarks>& landmarks_t, const EyeLossSettings& settings,
                            const EyeFeatureExtractor<Scalar>& extractor = PixelEyeFeatures<Scalar>{});

template <typename Scalar>
struct AdversarialLosses {
    ad::Tensor<Scalar> generator;
    ad::Tensor<Scalar> discriminator;
};

// Hinge losses averaged over discriminator scales.
template <typename Scalar>
AdversarialLosses<Scalar> adversarial_losses(const RealismScores<Scalar>& real, const RealismScores<Scalar>& fake);

// Weighted sum; throws NonFiniteTerm for any non-finite term.
LossReport total_loss(const LossTerms& terms, const LossWeights& weights);

} // namespace fswap

#endif // FACESWAP_LOSSES_HPP
