#ifndef FACESWAP_TRAINING_HPP
#define FACESWAP_TRAINING_HPP

// Pair sampling, the alternating discriminator/generator step and the
// checkpointed training loop.

#include "faceswap/geometry.hpp"
#include "faceswap/layers.hpp"
#include "faceswap/losses.hpp"
#include "faceswap/network.hpp"

#include "json.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace fswap {

struct TrainConfig {
    int epochs = 5;
    int batch_size = 4;
    double p_identical = 0.2;
    double p_same_person = 0.5;
    double lr_generator = 4e-4;
    double lr_discriminator = 4e-4;
    double beta1 = 0.0;
    double beta2 = 0.999;
    std::uint64_t seed = 0;
    int checkpoint_every = 100;
    // Classifier pretraining of the trainable identity encoder before the
    // adversarial phase; the encoder stays frozen afterwards.
    int identity_pretrain_steps = 50;

    void validate() const;

    static TrainConfig desk() { return {}; }
    // Reference regime of the full-scale run (12 epochs, batch 19).
    static TrainConfig paper() {
        TrainConfig c;
        c.epochs = 12;
        c.batch_size = 19;
        return c;
    }
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

struct AlignedFace {
    ImageF crop;
    AffineTransform transform; // frame → crop
    int frame_index = 0;
    Landmarks landmarks; // crop space
};

struct Dataset {
    std::map<std::string, std::vector<AlignedFace>> persons;

    std::size_t frame_count() const;
    // Throws EmptyDataset without persons or with a frameless person.
    void validate() const;
};

struct PairSample {
    AlignedFace x_s;
    AlignedFace x_t;
    bool same_person = false;
    bool identical = false;
};

// Uniform double in [0, 1) from the top 53 bits; portable across standard
// libraries, unlike std::uniform_real_distribution.
inline double uniform01(std::mt19937_64& rng) { return double(rng() >> 11) * 0x1.0p-53; }

PairSample sample_pair(const Dataset& dataset, const TrainConfig& config, std::mt19937_64& rng);

// Parameter snapshot used to roll back an aborted step.
template <typename Scalar>
using ParameterValues = std::map<std::string, ad::Buffer<Scalar>>;

template <typename Scalar>
ParameterValues<Scalar> snapshot(const nn::ParameterSet<Scalar>& params);
template <typename Scalar>
void restore(nn::ParameterSet<Scalar>& params, const ParameterValues<Scalar>& values);

template <typename Scalar>
class Trainer {
public:
    Trainer(FaceSwapModel<Scalar>& model, const TrainConfig& config, const LossWeights& weights,
            const EyeLossSettings& eye_settings);

    // One discriminator update on (real = x_t, fake = generated) followed by
    // one generator update on the weighted objective. On a non-finite loss
    // or parameter every partition is rolled back and NonFiniteLoss thrown.
    LossReport train_step(const std::vector<PairSample>& batch);

    // Cosine-softmax classification of persons; returns the final loss.
    double pretrain_identity(const Dataset& dataset, int steps, std::mt19937_64& rng);

    nn::Adam<Scalar>& generator_optimizer() { return opt_g_; }
    nn::Adam<Scalar>& discriminator_optimizer() { return opt_d_; }
    FaceSwapModel<Scalar>& model() { return model_; }

private:
    FaceSwapModel<Scalar>& model_;
    TrainConfig config_;
    LossWeights weights_;
    EyeLossSettings eye_settings_;
    nn::Adam<Scalar> opt_g_;
    nn::Adam<Scalar> opt_d_;
};

struct TrainOptions {
    std::filesystem::path out_dir;
    std::optional<std::filesystem::path> resume_from;
    // Called after every completed step.
    std::function<void(std::int64_t step, const LossReport&)> on_step;
};

struct TrainResult {
    std::int64_t steps = 0;
    std::filesystem::path checkpoint;
    std::filesystem::path log;
    std::vector<LossReport> reports;
};

inline constexpr const char* kTrainLogHeader = "step,l_id,l_adv,l_rec,l_att,l_eye,total,same_flag";

// Runs epochs × ⌈frames / batch⌉ steps. Writes <out>/checkpoint.fswp every
// checkpoint_every steps and at the end, and appends one row per step to
// <out>/train_log.csv. Three consecutive aborted steps rethrow.
TrainResult train(FaceSwapModel<float>& model, const Dataset& dataset, const TrainConfig& config,
                  const LossWeights& weights, const EyeLossSettings& eye_settings, const TrainOptions& options);

// Checkpoint with parameters, optimizer moments and sampler state.
CheckpointData make_training_checkpoint(Trainer<float>& trainer, std::int64_t step, const std::mt19937_64& rng);
// Restores parameters (all partitions) and, when present, optimizer state
// and sampler state. Returns the step count stored in the checkpoint.
std::int64_t load_training_checkpoint(const CheckpointData& data, Trainer<float>& trainer, std::mt19937_64& rng);

// Loads every parameter partition of a model from a checkpoint.
template <typename Scalar>
void load_model(FaceSwapModel<Scalar>& model, const CheckpointData& data);

} // namespace fswap

#endif // FACESWAP_TRAINING_HPP
