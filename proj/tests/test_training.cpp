#include "faceswap/training.hpp"

#include "doctest.h"
#include "support.hpp"

#include <fstream>
#include <limits>
#include <random>

using namespace fswap;

namespace {

GeneratorConfig small_config() {
    GeneratorConfig c;
    c.crop_size = 16;
    c.n_levels = 2;
    c.identity_dim = 8;
    c.base_channels = 4;
    c.discriminator_channels = 4;
    return c;
}

TrainConfig fast_train(double lr = 4e-4) {
    TrainConfig t;
    t.epochs = 1;
    t.batch_size = 2;
    t.lr_generator = lr;
    t.lr_discriminator = lr;
    t.identity_pretrain_steps = 2;
    t.checkpoint_every = 2;
    return t;
}

std::vector<PairSample> draw(const Dataset& d, const TrainConfig& cfg, int n, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::vector<PairSample> out;
    for (int i = 0; i < n; ++i) out.push_back(sample_pair(d, cfg, rng));
    return out;
}

struct Checksums {
    std::uint64_t g, d, id;
    bool operator==(const Checksums&) const = default;
};

template <typename Scalar>
Checksums checksums(const FaceSwapModel<Scalar>& m) {
    return {m.generator_params.checksum(), m.discriminator_params.checksum(), m.identity_params.checksum()};
}

std::size_t count_lines(const std::filesystem::path& p) {
    std::ifstream in(p);
    std::size_t n = 0;
    for (std::string line; std::getline(in, line);) ++n;
    return n;
}

} // namespace

TEST_CASE("sample_pair degenerate probabilities") {
    const Dataset d = testing::synthetic_dataset(3, 3, 16);
    TrainConfig all_identical;
    all_identical.p_identical = 1;
    all_identical.p_same_person = 1;
    for (const auto& s : draw(d, all_identical, 200, 1)) {
        CHECK(s.identical);
        CHECK(s.same_person);
        CHECK(s.x_s.crop == s.x_t.crop);
    }

    TrainConfig cross;
    cross.p_identical = 0;
    cross.p_same_person = 0;
    for (const auto& s : draw(d, cross, 200, 2)) {
        CHECK_FALSE(s.same_person);
        CHECK_FALSE(s.identical);
    }

    TrainConfig same_only;
    same_only.p_identical = 0;
    same_only.p_same_person = 1;
    for (const auto& s : draw(d, same_only, 200, 3)) {
        CHECK(s.same_person);
        CHECK_FALSE(s.identical);
        CHECK(s.x_s.frame_index != s.x_t.frame_index);
    }
}

TEST_CASE("sample_pair rates over 10^4 draws") {
    const Dataset d = testing::synthetic_dataset(2, 8, 16);
    const TrainConfig cfg; // 0.2 identical, 0.5 same person
    int identical = 0, same = 0, cross = 0;
    for (const auto& s : draw(d, cfg, 10000, 4)) {
        if (s.identical)
            ++identical;
        else if (s.same_person)
            ++same;
        else
            ++cross;
    }
    CHECK(std::abs(identical / 1e4 - 0.2) <= 0.03);
    CHECK(std::abs(same / 1e4 - 0.3) <= 0.03);
    CHECK(std::abs(cross / 1e4 - 0.5) <= 0.03);
}

TEST_CASE("sample_pair falls back to identical for single-frame persons") {
    const Dataset d = testing::synthetic_dataset(2, 1, 16);
    TrainConfig cfg;
    cfg.p_identical = 0;
    cfg.p_same_person = 1;
    for (const auto& s : draw(d, cfg, 50, 5)) {
        CHECK(s.identical);
        CHECK(s.same_person);
    }
}

TEST_CASE("sample_pair determinism and errors") {
    const Dataset d = testing::synthetic_dataset(2, 4, 16);
    const TrainConfig cfg;
    const auto a = draw(d, cfg, 100, 6);
    const auto b = draw(d, cfg, 100, 6);
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].x_s.crop == b[i].x_s.crop);
        CHECK(a[i].x_t.frame_index == b[i].x_t.frame_index);
        CHECK(a[i].identical == b[i].identical);
        CHECK(a[i].same_person == b[i].same_person);
    }

    std::mt19937_64 rng(7);
    CHECK_THROWS_AS(sample_pair(Dataset{}, cfg, rng), EmptyDataset);
    Dataset frameless;
    frameless.persons["x"] = {};
    CHECK_THROWS_AS(sample_pair(frameless, cfg, rng), EmptyDataset);

    TrainConfig cross;
    cross.p_identical = 0;
    cross.p_same_person = 0;
    const Dataset one = testing::synthetic_dataset(1, 3, 16);
    CHECK_THROWS_AS(sample_pair(one, cross, rng), EmptyDataset);
}

TEST_CASE("train config validation and presets") {
    TrainConfig c;
    c.p_identical = 0.6;
    CHECK_THROWS_AS(c.validate(), InvalidArgument);
    c = TrainConfig{};
    c.batch_size = 0;
    CHECK_THROWS_AS(c.validate(), InvalidArgument);
    CHECK(TrainConfig::paper().epochs == 12);
    CHECK(TrainConfig::paper().batch_size == 19);
    CHECK(TrainConfig::desk().epochs == 5);
    CHECK(TrainConfig::desk().batch_size == 4);
}

TEST_CASE("train_step with zero learning rates is a no-op") {
    const Dataset d = testing::synthetic_dataset(2, 3, 16);
    FaceSwapModel<float> model(small_config(), 1);
    const Checksums before = checksums(model);
    Trainer<float> trainer(model, fast_train(0.0), LossWeights{}, EyeLossSettings{});
    const LossReport r = trainer.train_step(draw(d, TrainConfig{}, 3, 8));
    CHECK(std::isfinite(r.total));
    CHECK(checksums(model) == before);
}

TEST_CASE("train_step is deterministic") {
    const Dataset d = testing::synthetic_dataset(2, 3, 16);
    const auto batch = draw(d, TrainConfig{}, 3, 9);
    FaceSwapModel<float> a(small_config(), 2), b(small_config(), 2);
    Trainer<float> ta(a, fast_train(), LossWeights{}, EyeLossSettings{});
    Trainer<float> tb(b, fast_train(), LossWeights{}, EyeLossSettings{});
    for (int i = 0; i < 2; ++i) {
        const LossReport ra = ta.train_step(batch);
        const LossReport rb = tb.train_step(batch);
        CHECK(ra.total == rb.total);
        CHECK(ra.terms.id == rb.terms.id);
        CHECK(ra.terms.adv == rb.terms.adv);
        CHECK(ra.terms.rec == rb.terms.rec);
        CHECK(ra.terms.att == rb.terms.att);
        CHECK(ra.terms.eye == rb.terms.eye);
        CHECK(ra.same_person_flag == rb.same_person_flag);
    }
    CHECK(checksums(a) == checksums(b));
}

TEST_CASE("train_step report is consistent") {
    const Dataset d = testing::synthetic_dataset(2, 3, 16);
    TrainConfig cross;
    cross.p_identical = 0;
    cross.p_same_person = 0;
    FaceSwapModel<float> model(small_config(), 3);
    const LossWeights w;
    Trainer<float> trainer(model, fast_train(), w, EyeLossSettings{});
    const LossReport r = trainer.train_step(draw(d, cross, 2, 10));
    CHECK(r.terms.rec == 0.0);
    CHECK_FALSE(r.same_person_flag);
    CHECK(r.same_person_count == 0);
    const auto& t = r.terms;
    CHECK(std::abs(r.total - (w.w_id * t.id + w.w_adv * t.adv + w.w_rec * t.rec + w.w_att * t.att + w.w_eye * t.eye)) <=
          1e-9);

    TrainConfig same;
    same.p_identical = 1;
    same.p_same_person = 1;
    const LossReport s = trainer.train_step(draw(d, same, 2, 11));
    CHECK(s.same_person_flag);
    CHECK(s.same_person_count == 2);
}

TEST_CASE("discriminator and generator updates touch disjoint partitions") {
    const Dataset d = testing::synthetic_dataset(2, 3, 16);
    const auto batch = draw(d, TrainConfig{}, 2, 12);

    FaceSwapModel<float> a(small_config(), 4);
    const Checksums a0 = checksums(a);
    TrainConfig only_d = fast_train();
    only_d.lr_generator = 0;
    Trainer<float> ta(a, only_d, LossWeights{}, EyeLossSettings{});
    ta.train_step(batch);
    CHECK(a.generator_params.checksum() == a0.g);
    CHECK(a.identity_params.checksum() == a0.id);
    CHECK(a.discriminator_params.checksum() != a0.d);

    FaceSwapModel<float> b(small_config(), 4);
    TrainConfig only_g = fast_train();
    only_g.lr_discriminator = 0;
    Trainer<float> tb(b, only_g, LossWeights{}, EyeLossSettings{});
    tb.train_step(batch);
    CHECK(b.discriminator_params.checksum() == a0.d);
    CHECK(b.identity_params.checksum() == a0.id);
    CHECK(b.generator_params.checksum() != a0.g);
}

TEST_CASE("a non-finite loss aborts the step and keeps parameters") {
    const Dataset d = testing::synthetic_dataset(2, 3, 16);
    auto batch = draw(d, TrainConfig{}, 2, 13);
    batch[0].x_t.crop(0, 3, 3) = std::numeric_limits<float>::quiet_NaN();
    FaceSwapModel<float> model(small_config(), 5);
    const Checksums before = checksums(model);
    Trainer<float> trainer(model, fast_train(), LossWeights{}, EyeLossSettings{});
    CHECK_THROWS_AS(trainer.train_step(batch), NonFiniteLoss);
    CHECK(checksums(model) == before);
    CHECK(trainer.generator_optimizer().steps() == 0);
    CHECK(trainer.discriminator_optimizer().steps() == 0);
}

TEST_CASE("reconstruction decreases on identical pairs without the adversarial term") {
    const Dataset d = testing::synthetic_dataset(1, 4, 16);
    TrainConfig cfg = fast_train(1e-3);
    cfg.p_identical = 1;
    cfg.p_same_person = 1;
    LossWeights w;
    w.w_adv = 0;
    FaceSwapModel<float> model(small_config(), 6);
    Trainer<float> trainer(model, cfg, w, EyeLossSettings{});
    std::mt19937_64 rng(14);
    std::vector<double> rec;
    for (int i = 0; i < 50; ++i) {
        std::vector<PairSample> batch;
        for (int j = 0; j < 2; ++j) batch.push_back(sample_pair(d, cfg, rng));
        rec.push_back(trainer.train_step(batch).terms.rec);
    }
    double head = 0, tail = 0;
    for (int i = 0; i < 5; ++i) {
        head += rec[std::size_t(i)];
        tail += rec[rec.size() - 1 - std::size_t(i)];
    }
    MESSAGE("rec first " << rec.front() << " last " << rec.back());
    CHECK(rec.back() < rec.front());
    CHECK(tail < 0.5 * head);
}

TEST_CASE("identity pretraining lowers the classification loss") {
    const Dataset d = testing::synthetic_dataset(3, 3, 16);
    FaceSwapModel<float> model(small_config(), 7);
    Trainer<float> trainer(model, fast_train(), LossWeights{}, EyeLossSettings{});
    std::mt19937_64 rng(15);
    const double first = trainer.pretrain_identity(d, 1, rng);
    const double later = trainer.pretrain_identity(d, 40, rng);
    CHECK(later < first);
}

TEST_CASE("train with zero epochs writes the initial checkpoint and an empty log") {
    const auto dir = testing::scratch_dir("train0");
    const Dataset d = testing::synthetic_dataset(2, 2, 16);
    FaceSwapModel<float> model(small_config(), 8);
    const Checksums before = checksums(model);
    TrainConfig cfg = fast_train();
    cfg.epochs = 0;
    const TrainResult r = train(model, d, cfg, LossWeights{}, EyeLossSettings{}, {dir, std::nullopt, nullptr});
    CHECK(r.steps == 0);
    CHECK(std::filesystem::exists(r.checkpoint));
    CHECK(count_lines(r.log) == 1);
    CHECK(testing::slurp(r.log) == std::string(kTrainLogHeader) + "\n");
    CHECK(checksums(model) == before);

    FaceSwapModel<float> other(small_config(), 99);
    load_model(other, read_checkpoint(r.checkpoint));
    CHECK(checksums(other) == before);
    std::filesystem::remove_all(dir);
}

TEST_CASE("train writes logs and checkpoints and resumes exactly") {
    const auto dir = testing::scratch_dir("train_resume");
    const Dataset d = testing::synthetic_dataset(2, 2, 16);
    TrainConfig cfg = fast_train();
    cfg.epochs = 2; // 2 steps per epoch
    int calls = 0;

    // Uninterrupted run.
    FaceSwapModel<float> full(small_config(), 9);
    const TrainResult a = train(full, d, cfg, LossWeights{}, EyeLossSettings{},
                                {dir / "full", std::nullopt, [&](std::int64_t, const LossReport&) { ++calls; }});
    CHECK(a.steps == 4);
    CHECK(calls == 4);
    CHECK(count_lines(a.log) == 5);

    // Half, then resume into a differently initialized model.
    TrainConfig half = cfg;
    half.epochs = 1;
    FaceSwapModel<float> first(small_config(), 9);
    const TrainResult h = train(first, d, half, LossWeights{}, EyeLossSettings{}, {dir / "split", std::nullopt, nullptr});
    CHECK(h.steps == 2);
    FaceSwapModel<float> second(small_config(), 123);
    const TrainResult b =
        train(second, d, cfg, LossWeights{}, EyeLossSettings{}, {dir / "split", h.checkpoint, nullptr});
    CHECK(b.steps == 4);
    CHECK(count_lines(b.log) == 5);
    CHECK(checksums(second) == checksums(full));

    // Resuming a finished run performs no further steps.
    FaceSwapModel<float> third(small_config(), 77);
    const auto saved = read_checkpoint(b.checkpoint);
    const TrainResult c =
        train(third, d, cfg, LossWeights{}, EyeLossSettings{}, {dir / "again", b.checkpoint, nullptr});
    CHECK(c.reports.empty());
    FaceSwapModel<float> reference(small_config(), 5);
    load_model(reference, saved);
    CHECK(checksums(third) == checksums(reference));
    CHECK(checksums(third) == checksums(full));
    std::filesystem::remove_all(dir);
}

TEST_CASE("train gives up after three consecutive non-finite steps") {
    const auto dir = testing::scratch_dir("train_nan");
    Dataset d = testing::synthetic_dataset(2, 2, 16);
    for (auto& [person, faces] : d.persons)
        for (auto& f : faces) f.crop(1, 2, 2) = std::numeric_limits<float>::infinity();
    FaceSwapModel<float> model(small_config(), 10);
    TrainConfig cfg = fast_train();
    cfg.identity_pretrain_steps = 0;
    CHECK_THROWS_AS(train(model, d, cfg, LossWeights{}, EyeLossSettings{}, {dir, std::nullopt, nullptr}),
                    NonFiniteLoss);
    std::filesystem::remove_all(dir);
}
