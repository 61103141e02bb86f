#include "faceswap/losses.hpp"

#include <cmath>

namespace fswap {

using ad::Shape;
using ad::Tensor;

void LossWeights::validate() const {
    const double w[] = {w_id, w_adv, w_rec, w_att, w_eye};
    bool any = false;
    for (double v : w) {
        if (!(v >= 0.0) || !std::isfinite(v)) throw InvalidArgument("loss weights must be finite and non-negative");
        any = any || v > 0.0;
    }
    if (!any) throw InvalidArgument("at least one loss weight must be positive");
}

namespace {

template <typename Scalar>
void check_unit_rows(const Tensor<Scalar>& z, const char* what) {
    const Shape s = z.shape();
    const Eigen::Index per = s.sample();
    for (int n = 0; n < s.n; ++n) {
        const double norm = std::sqrt(double(z.value().segment(n * per, per).square().sum()));
        if (!std::isfinite(norm) || std::abs(norm - 1.0) > 1e-3)
            throw NonNormalizedInput(std::string(what) + " has norm " + std::to_string(norm));
    }
}

} // namespace

template <typename Scalar>
Tensor<Scalar> identity_loss(const Tensor<Scalar>& z_gen, const Tensor<Scalar>& z_src) {
    if (!(z_gen.shape() == z_src.shape()))
        throw ShapeMismatch("identity_loss " + z_gen.shape().str() + " vs " + z_src.shape().str());
    check_unit_rows(z_gen, "generated identity");
    check_unit_rows(z_src, "source identity");
    const Tensor<Scalar> cosine = ad::sample_mean(z_gen * z_src) * Scalar(z_gen.shape().sample());
    return Scalar(1) + (-ad::mean(cosine));
}

double identity_loss(const IdentityVector& z_gen, const IdentityVector& z_src) {
    if (z_gen.dim() != z_src.dim()) throw ShapeMismatch("identity vectors differ in dimension");
    z_gen.check_normalized();
    z_src.check_normalized();
    return 1.0 - z_gen.values.dot(z_src.values);
}

template <typename Scalar>
Tensor<Scalar> attribute_loss(const AttributeFeatureStack<Scalar>& gen, const AttributeFeatureStack<Scalar>& tgt) {
    if (gen.size() != tgt.size() || gen.size() == 0) throw ShapeMismatch("attribute stacks differ in depth");
    Tensor<Scalar> total;
    for (int i = 0; i < gen.size(); ++i) {
        const auto& a = gen.levels[std::size_t(i)];
        const auto& b = tgt.levels[std::size_t(i)];
        if (!(a.shape() == b.shape()))
            throw ShapeMismatch("attribute level " + std::to_string(i) + ": " + a.shape().str() + " vs " + b.shape().str());
        Tensor<Scalar> term = ad::mean(ad::square(a - b));
        total = total.defined() ? total + term : term;
    }
    return total * Scalar(0.5);
}

template <typename Scalar>
Tensor<Scalar> reconstruction_loss(const Tensor<Scalar>& y, const Tensor<Scalar>& x_t,
                                   const std::vector<bool>& same_person) {
    if (!(y.shape() == x_t.shape())) throw ShapeMismatch("reconstruction " + y.shape().str() + " vs " + x_t.shape().str());
    if (int(same_person.size()) != y.shape().n) throw ShapeMismatch("one same_person flag per sample expected");
    ad::Buffer<Scalar> gate(y.shape().n);
    for (int n = 0; n < y.shape().n; ++n) gate(n) = same_person[std::size_t(n)] ? Scalar(1) : Scalar(0);
    const auto gate_t = Tensor<Scalar>::from(Shape{y.shape().n, 1, 1, 1}, gate);
    return ad::mean(ad::sample_mean(ad::square(y - x_t)) * gate_t) * Scalar(0.5);
}

template <typename Scalar>
Tensor<Scalar> eye_loss(const Tensor<Scalar>& y, const Tensor<Scalar>& x_t, const std::vector<Landmarks>& landmarks_t,
                        const EyeLossSettings& settings, const EyeFeatureExtractor<Scalar>& extractor) {
    const Shape s = y.shape();
    if (!(s == x_t.shape())) throw ShapeMismatch("eye_loss " + s.str() + " vs " + x_t.shape().str());
    if (int(landmarks_t.size()) != s.n) throw ShapeMismatch("one landmark set per sample expected");
    const int p = settings.patch_size;
    Tensor<Scalar> total;
    for (int n = 0; n < s.n; ++n) {
        const auto [left, right] = eye_regions(landmarks_t[std::size_t(n)], settings.margin, s.w, s.h);
        for (const EyeRegion& eye : {left, right}) {
            const ad::PixelBox box = eye.box.pixels();
            const auto fy = extractor(ad::crop_resize(y, n, box, p, p));
            const auto fx = extractor(ad::crop_resize(x_t, n, box, p, p));
            const auto term = ad::mean(ad::square(fy - fx));
            total = total.defined() ? total + term : term;
        }
    }
    return total * Scalar(0.5 / double(s.n));
}

template <typename Scalar>
AdversarialLosses<Scalar> adversarial_losses(const RealismScores<Scalar>& real, const RealismScores<Scalar>& fake) {
    if (real.maps.size() != fake.maps.size() || real.maps.empty())
        throw ShapeMismatch("real and fake score lists differ in length");
    Tensor<Scalar> d, g;
    for (std::size_t i = 0; i < real.maps.size(); ++i) {
        if (!(real.maps[i].shape() == fake.maps[i].shape())) throw ShapeMismatch("score map shapes differ");
        const auto d_term = ad::mean(ad::relu(Scalar(1) + (-real.maps[i]))) + ad::mean(ad::relu(Scalar(1) + fake.maps[i]));
        const auto g_term = ad::mean(fake.maps[i]);
        d = d.defined() ? d + d_term : d_term;
        g = g.defined() ? g + g_term : g_term;
    }
    const Scalar inv = Scalar(1.0 / double(real.maps.size()));
    return {g * (-inv), d * inv};
}

LossReport total_loss(const LossTerms& t, const LossWeights& w) {
    const double terms[] = {t.id, t.adv, t.rec, t.att, t.eye};
    for (double v : terms)
        if (!std::isfinite(v)) throw NonFiniteTerm("loss term is not finite");
    LossReport r;
    r.terms = t;
    r.total = w.w_id * t.id + w.w_adv * t.adv + w.w_rec * t.rec + w.w_att * t.att + w.w_eye * t.eye;
    return r;
}

#define FSWAP_INSTANTIATE(S)                                                                                       \
    template Tensor<S> identity_loss(const Tensor<S>&, const Tensor<S>&);                                          \
    template Tensor<S> attribute_loss(const AttributeFeatureStack<S>&, const AttributeFeatureStack<S>&);           \
    template Tensor<S> reconstruction_loss(const Tensor<S>&, const Tensor<S>&, const std::vector<bool>&);          \
    template Tensor<S> eye_loss(const Tensor<S>&, const Tensor<S>&, const std::vector<Landmarks>&,                 \
                                const EyeLossSettings&, const EyeFeatureExtractor<S>&);                            \
    template AdversarialLosses<S> adversarial_losses(const RealismScores<S>&, const RealismScores<S>&);

FSWAP_INSTANTIATE(float)
FSWAP_INSTANTIATE(double)

#undef FSWAP_INSTANTIATE

} // namespace fswap
