#include "faceswap/training.hpp"

#include "faceswap/serialization.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace fswap {

using ad::Shape;
using ad::Tensor;

void TrainConfig::validate() const {
    if (epochs < 0) throw InvalidArgument("epochs must be >= 0");
    if (batch_size < 1) throw InvalidArgument("batch_size must be >= 1");
    if (!(0.0 <= p_identical && p_identical <= p_same_person && p_same_person <= 1.0))
        throw InvalidArgument("need 0 <= p_identical <= p_same_person <= 1");
    if (!(lr_generator >= 0.0) || !(lr_discriminator >= 0.0)) throw InvalidArgument("learning rates must be >= 0");
    if (!(0.0 <= beta1 && beta1 < 1.0 && 0.0 <= beta2 && beta2 < 1.0)) throw InvalidArgument("betas must be in [0, 1)");
    if (checkpoint_every < 1) throw InvalidArgument("checkpoint_every must be >= 1");
    if (identity_pretrain_steps < 0) throw InvalidArgument("identity_pretrain_steps must be >= 0");
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
    j = {{"epochs", c.epochs},
         {"batch_size", c.batch_size},
         {"p_identical", c.p_identical},
         {"p_same_person", c.p_same_person},
         {"lr_generator", c.lr_generator},
         {"lr_discriminator", c.lr_discriminator},
         {"beta1", c.beta1},
         {"beta2", c.beta2},
         {"seed", c.seed},
         {"checkpoint_every", c.checkpoint_every},
         {"identity_pretrain_steps", c.identity_pretrain_steps}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
    detail::check_keys(j,
                       {"preset", "epochs", "batch_size", "p_identical", "p_same_person", "lr_generator",
                        "lr_discriminator", "beta1", "beta2", "seed", "checkpoint_every", "identity_pretrain_steps"},
                       "train config");
    if (j.contains("preset")) {
        const auto preset = j.at("preset").get<std::string>();
        if (preset == "desk")
            c = TrainConfig::desk();
        else if (preset == "paper")
            c = TrainConfig::paper();
        else
            throw InvalidArgument("unknown train preset '" + preset + "'");
    }
    detail::read_optional(j, "epochs", c.epochs);
    detail::read_optional(j, "batch_size", c.batch_size);
    detail::read_optional(j, "p_identical", c.p_identical);
    detail::read_optional(j, "p_same_person", c.p_same_person);
    detail::read_optional(j, "lr_generator", c.lr_generator);
    detail::read_optional(j, "lr_discriminator", c.lr_discriminator);
    detail::read_optional(j, "beta1", c.beta1);
    detail::read_optional(j, "beta2", c.beta2);
    detail::read_optional(j, "seed", c.seed);
    detail::read_optional(j, "checkpoint_every", c.checkpoint_every);
    detail::read_optional(j, "identity_pretrain_steps", c.identity_pretrain_steps);
    c.validate();
}

std::size_t Dataset::frame_count() const {
    std::size_t n = 0;
    for (const auto& [id, frames] : persons) n += frames.size();
    return n;
}

void Dataset::validate() const {
    if (persons.empty()) throw EmptyDataset("dataset has no persons");
    for (const auto& [id, frames] : persons)
        if (frames.empty()) throw EmptyDataset("person '" + id + "' has no frames");
}

namespace {

std::size_t pick(std::mt19937_64& rng, std::size_t n) { return std::size_t(rng() % n); }

} // namespace

PairSample sample_pair(const Dataset& dataset, const TrainConfig& config, std::mt19937_64& rng) {
    dataset.validate();
    std::vector<const std::vector<AlignedFace>*> people;
    for (const auto& [id, frames] : dataset.persons) people.push_back(&frames);

    const double u = uniform01(rng);
    PairSample s;
    if (u < config.p_same_person) {
        const auto& frames = *people[pick(rng, people.size())];
        const std::size_t a = pick(rng, frames.size());
        if (u < config.p_identical || frames.size() < 2) {
            s.x_s = s.x_t = frames[a];
            s.identical = true;
        } else {
            std::size_t b = pick(rng, frames.size() - 1);
            if (b >= a) ++b;
            s.x_s = frames[a];
            s.x_t = frames[b];
        }
        s.same_person = true;
        return s;
    }
    if (people.size() < 2) throw EmptyDataset("cross-identity pairs need at least two persons");
    const std::size_t p = pick(rng, people.size());
    std::size_t q = pick(rng, people.size() - 1);
    if (q >= p) ++q;
    s.x_s = (*people[p])[pick(rng, people[p]->size())];
    s.x_t = (*people[q])[pick(rng, people[q]->size())];
    return s;
}

template <typename Scalar>
ParameterValues<Scalar> snapshot(const nn::ParameterSet<Scalar>& params) {
    ParameterValues<Scalar> out;
    for (const auto& [name, p] : params.items()) out.emplace(name, p.value());
    return out;
}

template <typename Scalar>
void restore(nn::ParameterSet<Scalar>& params, const ParameterValues<Scalar>& values) {
    for (auto& [name, p] : params.items()) p.mutable_value() = values.at(name);
}

namespace {

template <typename Scalar>
bool all_finite(const nn::ParameterSet<Scalar>& params) {
    for (const auto& [name, p] : params.items())
        if (!p.value().allFinite()) return false;
    return true;
}

template <typename Scalar>
struct OptimizerState {
    std::int64_t steps;
    std::map<std::string, ad::Buffer<Scalar>> m;
    std::map<std::string, ad::Buffer<Scalar>> v;

    explicit OptimizerState(nn::Adam<Scalar>& opt)
        : steps(opt.steps()), m(opt.first_moments()), v(opt.second_moments()) {}

    void restore(nn::Adam<Scalar>& opt) const {
        opt.set_steps(steps);
        opt.first_moments() = m;
        opt.second_moments() = v;
    }
};

template <typename Scalar>
Tensor<Scalar> stack_crops(const std::vector<PairSample>& batch, bool source) {
    std::vector<Image<Scalar>> crops;
    crops.reserve(batch.size());
    for (const auto& s : batch) crops.push_back((source ? s.x_s : s.x_t).crop.template cast<Scalar>());
    return to_tensor(crops);
}

} // namespace

template <typename Scalar>
Trainer<Scalar>::Trainer(FaceSwapModel<Scalar>& model, const TrainConfig& config, const LossWeights& weights,
                         const EyeLossSettings& eye_settings)
    : model_(model), config_(config), weights_(weights), eye_settings_(eye_settings),
      opt_g_(model.generator_params, {config.lr_generator, config.beta1, config.beta2, 1e-8}),
      opt_d_(model.discriminator_params, {config.lr_discriminator, config.beta1, config.beta2, 1e-8}) {
    config.validate();
    weights.validate();
}

template <typename Scalar>
LossReport Trainer<Scalar>::train_step(const std::vector<PairSample>& batch) {
    if (batch.empty()) throw InvalidArgument("train_step needs a non-empty batch");
    const int S = model_.config().crop_size;
    for (const auto& s : batch) {
        if (s.identical && !s.same_person) throw InvalidArgument("identical pair must be same-person");
        for (const auto* f : {&s.x_s, &s.x_t})
            if (f->crop.rows() != S || f->crop.cols() != S || f->crop.channels() != 3)
                throw ShapeMismatch("training crops must be " + std::to_string(S) + "×" + std::to_string(S) + "×3");
    }
    const Tensor<Scalar> xs = stack_crops<Scalar>(batch, true);
    const Tensor<Scalar> xt = stack_crops<Scalar>(batch, false);
    std::vector<bool> same;
    std::vector<Landmarks> landmarks;
    for (const auto& s : batch) {
        same.push_back(s.same_person);
        landmarks.push_back(s.x_t.landmarks);
    }

    const auto g_before = snapshot(model_.generator_params);
    const auto d_before = snapshot(model_.discriminator_params);
    const OptimizerState<Scalar> g_state(opt_g_);
    const OptimizerState<Scalar> d_state(opt_d_);
    auto abort = [&](const std::string& why) -> NonFiniteLoss {
        restore(model_.generator_params, g_before);
        restore(model_.discriminator_params, d_before);
        g_state.restore(opt_g_);
        d_state.restore(opt_d_);
        model_.generator_params.zero_grad();
        model_.discriminator_params.zero_grad();
        model_.identity_params.zero_grad();
        return NonFiniteLoss(why);
    };

    // The identity encoder is frozen: the source embedding is a constant.
    const Tensor<Scalar> z_src = model_.identity_encoder()(xs).detach();
    const AttributeFeatureStack<Scalar> att_t = model_.attribute_encoder()(xt);
    const Tensor<Scalar> y = model_.generator()(z_src, att_t);

    // Discriminator update.
    model_.discriminator_params.zero_grad();
    const RealismScores<Scalar> real = model_.discriminator()(xt);
    {
        const RealismScores<Scalar> fake = model_.discriminator()(y.detach());
        Tensor<Scalar> d_loss = adversarial_losses(real, fake).discriminator;
        if (!std::isfinite(double(d_loss.item()))) throw abort("discriminator loss is not finite");
        d_loss.backward();
        opt_d_.step();
        if (!all_finite(model_.discriminator_params)) throw abort("discriminator parameters became non-finite");
    }

    // Generator update against the freshly updated discriminator.
    model_.generator_params.zero_grad();
    model_.identity_params.zero_grad();
    RealismScores<Scalar> real_const;
    for (const auto& m : real.maps) real_const.maps.push_back(m.detach());
    const Tensor<Scalar> l_id = identity_loss(model_.identity_encoder()(y), z_src);
    const Tensor<Scalar> l_adv = adversarial_losses(real_const, model_.discriminator()(y)).generator;
    const Tensor<Scalar> l_rec = reconstruction_loss(y, xt, same);
    const Tensor<Scalar> l_att = attribute_loss(model_.attribute_encoder()(y), att_t);
    const Tensor<Scalar> l_eye = eye_loss(y, xt, landmarks, eye_settings_);

    LossTerms terms{double(l_id.item()), double(l_adv.item()), double(l_rec.item()), double(l_att.item()),
                    double(l_eye.item())};
    LossReport report;
    try {
        report = total_loss(terms, weights_);
    } catch (const NonFiniteTerm& e) {
        throw abort(e.what());
    }
    report.same_person_count = int(std::count(same.begin(), same.end(), true));
    report.same_person_flag = report.same_person_count > 0;

    Tensor<Scalar> total = l_id * Scalar(weights_.w_id) + l_adv * Scalar(weights_.w_adv) +
                           l_rec * Scalar(weights_.w_rec) + l_att * Scalar(weights_.w_att) +
                           l_eye * Scalar(weights_.w_eye);
    // Gradients reaching the discriminator here are discarded.
    model_.discriminator_params.zero_grad();
    total.backward();
    opt_g_.step();
    model_.discriminator_params.zero_grad();
    model_.identity_params.zero_grad();
    if (!all_finite(model_.generator_params)) throw abort("generator parameters became non-finite");
    return report;
}

template <typename Scalar>
double Trainer<Scalar>::pretrain_identity(const Dataset& dataset, int steps, std::mt19937_64& rng) {
    dataset.validate();
    if (steps <= 0 || model_.identity_params.count() == 0) return 0.0;
    const int classes = int(dataset.persons.size());
    const int dim = model_.config().identity_dim;
    // Temporary class centers, discarded after pretraining.
    nn::ParameterSet<Scalar> head;
    std::mt19937_64 head_rng(config_.seed ^ 0xc1a55ull);
    const Tensor<Scalar> centers = head.add("centers", Shape{classes, dim, 1, 1}, head_rng, Scalar(1));
    const Tensor<Scalar> no_bias = Tensor<Scalar>::zeros(Shape{classes, 1, 1, 1});
    nn::Adam<Scalar> opt_id(model_.identity_params, {1e-3, 0.9, 0.999, 1e-8});
    nn::Adam<Scalar> opt_head(head, {1e-2, 0.9, 0.999, 1e-8});

    std::vector<const std::vector<AlignedFace>*> people;
    for (const auto& [id, frames] : dataset.persons) people.push_back(&frames);
    const int batch = std::max(config_.batch_size, 2 * classes);
    const Scalar scale(16);
    double last = 0.0;
    for (int step = 0; step < steps; ++step) {
        std::vector<Image<Scalar>> crops;
        std::vector<int> labels;
        for (int i = 0; i < batch; ++i) {
            const int c = i % classes;
            const auto& frames = *people[std::size_t(c)];
            crops.push_back(frames[std::size_t(rng() % frames.size())].crop.template cast<Scalar>());
            labels.push_back(c);
        }
        model_.identity_params.zero_grad();
        head.zero_grad();
        const Tensor<Scalar> z = model_.identity_encoder()(to_tensor(crops));
        const Tensor<Scalar> w = ad::l2_normalize(centers, Scalar(1e-12));
        Tensor<Scalar> loss = ad::cross_entropy(ad::conv2d(z, w, no_bias, 1, 0) * scale, labels);
        last = double(loss.item());
        if (!std::isfinite(last)) throw NonFiniteLoss("identity pretraining diverged");
        loss.backward();
        opt_id.step();
        opt_head.step();
    }
    model_.identity_params.zero_grad();
    return last;
}

template <typename Scalar>
void load_model(FaceSwapModel<Scalar>& model, const CheckpointData& data) {
    if (!(data.config == model.config())) throw ConfigMismatch("checkpoint generator config differs from the model");
    import_parameters(model.generator_params, data);
    import_parameters(model.discriminator_params, data);
    import_parameters(model.identity_params, data);
}

namespace {

void export_moments(const std::string& prefix, nn::Adam<float>& opt, const nn::ParameterSet<float>& params,
                    CheckpointData& data) {
    for (const auto& [name, p] : params.items()) {
        const auto& m = opt.first_moments().at(name);
        const auto& v = opt.second_moments().at(name);
        data.tensors[prefix + ".m." + name] = {p.shape(), std::vector<float>(m.data(), m.data() + m.size())};
        data.tensors[prefix + ".v." + name] = {p.shape(), std::vector<float>(v.data(), v.data() + v.size())};
    }
}

void import_moments(const std::string& prefix, nn::Adam<float>& opt, const nn::ParameterSet<float>& params,
                    const CheckpointData& data) {
    for (const auto& [name, p] : params.items()) {
        for (const char* kind : {".m.", ".v."}) {
            auto it = data.tensors.find(prefix + kind + name);
            if (it == data.tensors.end()) throw ConfigMismatch("checkpoint lacks optimizer state for " + name);
            const auto& values = it->second.second;
            if (Eigen::Index(values.size()) != p.value().size())
                throw ConfigMismatch("optimizer state size differs for " + name);
            auto& dst = std::string(kind) == ".m." ? opt.first_moments().at(name) : opt.second_moments().at(name);
            dst = Eigen::Map<const ad::Buffer<float>>(values.data(), Eigen::Index(values.size()));
        }
    }
}

} // namespace

CheckpointData make_training_checkpoint(Trainer<float>& trainer, std::int64_t step, const std::mt19937_64& rng) {
    auto& model = trainer.model();
    CheckpointData data;
    data.config = model.config();
    export_parameters(model.generator_params, data);
    export_parameters(model.discriminator_params, data);
    export_parameters(model.identity_params, data);
    export_moments("adam.g", trainer.generator_optimizer(), model.generator_params, data);
    export_moments("adam.d", trainer.discriminator_optimizer(), model.discriminator_params, data);
    std::ostringstream rng_state;
    rng_state << rng;
    data.metadata["step"] = std::to_string(step);
    data.metadata["adam_g_steps"] = std::to_string(trainer.generator_optimizer().steps());
    data.metadata["adam_d_steps"] = std::to_string(trainer.discriminator_optimizer().steps());
    data.metadata["sampler_state"] = rng_state.str();
    return data;
}

std::int64_t load_training_checkpoint(const CheckpointData& data, Trainer<float>& trainer, std::mt19937_64& rng) {
    auto& model = trainer.model();
    load_model(model, data);
    std::int64_t step = 0;
    if (auto it = data.metadata.find("step"); it != data.metadata.end()) step = std::stoll(it->second);
    if (data.metadata.count("adam_g_steps")) {
        import_moments("adam.g", trainer.generator_optimizer(), model.generator_params, data);
        import_moments("adam.d", trainer.discriminator_optimizer(), model.discriminator_params, data);
        trainer.generator_optimizer().set_steps(std::stoll(data.metadata.at("adam_g_steps")));
        trainer.discriminator_optimizer().set_steps(std::stoll(data.metadata.at("adam_d_steps")));
    }
    if (auto it = data.metadata.find("sampler_state"); it != data.metadata.end()) {
        std::istringstream in(it->second);
        in >> rng;
        if (!in) throw IoFailure("corrupt sampler state in checkpoint");
    }
    return step;
}

TrainResult train(FaceSwapModel<float>& model, const Dataset& dataset, const TrainConfig& config,
                  const LossWeights& weights, const EyeLossSettings& eye_settings, const TrainOptions& options) {
    config.validate();
    dataset.validate();
    std::filesystem::create_directories(options.out_dir);
    TrainResult result;
    result.checkpoint = options.out_dir / "checkpoint.fswp";
    result.log = options.out_dir / "train_log.csv";

    Trainer<float> trainer(model, config, weights, eye_settings);
    std::mt19937_64 rng(config.seed);
    std::int64_t step = 0;
    bool resumed = false;
    if (options.resume_from) {
        step = load_training_checkpoint(read_checkpoint(*options.resume_from), trainer, rng);
        resumed = true;
    }
    const std::int64_t per_epoch =
        std::int64_t((dataset.frame_count() + std::size_t(config.batch_size) - 1) / std::size_t(config.batch_size));
    const std::int64_t total_steps = std::int64_t(config.epochs) * per_epoch;

    const bool append = resumed && std::filesystem::exists(result.log);
    std::ofstream log(result.log, append ? std::ios::app : std::ios::trunc);
    if (!log) throw IoFailure("cannot write " + result.log.string());
    if (!append) log << kTrainLogHeader << '\n';
    log << std::setprecision(9);

    if (!resumed && total_steps > 0) {
        std::mt19937_64 id_rng(config.seed ^ 0x1d0e5ull);
        trainer.pretrain_identity(dataset, config.identity_pretrain_steps, id_rng);
    }

    int consecutive_failures = 0;
    while (step < total_steps) {
        std::vector<PairSample> batch;
        for (int i = 0; i < config.batch_size; ++i) batch.push_back(sample_pair(dataset, config, rng));
        LossReport report;
        try {
            report = trainer.train_step(batch);
        } catch (const NonFiniteLoss&) {
            if (++consecutive_failures >= 3) throw;
            continue;
        }
        consecutive_failures = 0;
        ++step;
        const auto& t = report.terms;
        log << step << ',' << t.id << ',' << t.adv << ',' << t.rec << ',' << t.att << ',' << t.eye << ','
            << report.total << ',' << (report.same_person_flag ? 1 : 0) << '\n';
        result.reports.push_back(report);
        if (options.on_step) options.on_step(step, report);
        if (step % config.checkpoint_every == 0 && step < total_steps)
            write_checkpoint(result.checkpoint, make_training_checkpoint(trainer, step, rng));
    }
    log.flush();
    write_checkpoint(result.checkpoint, make_training_checkpoint(trainer, step, rng));
    result.steps = step;
    return result;
}

#define FSWAP_INSTANTIATE(S)                                                                                       \
    template ParameterValues<S> snapshot(const nn::ParameterSet<S>&);                                              \
    template void restore(nn::ParameterSet<S>&, const ParameterValues<S>&);                                        \
    template class Trainer<S>;                                                                                     \
    template void load_model(FaceSwapModel<S>&, const CheckpointData&);

FSWAP_INSTANTIATE(float)
FSWAP_INSTANTIATE(double)

#undef FSWAP_INSTANTIATE

} // namespace fswap
