#include <cmath>
#include <string>
#include <vector>

#include "doctest.h"
#include "protoshield/train.hpp"
#include "test_util.hpp"

using namespace protoshield;

namespace {

ModelSpec blob_spec(int k = 3) {
    ModelSpec s;
    s.name = "blobnet";
    s.input_shape = {1, 8, 8};
    s.num_classes = k;
    s.layers = {
        {LayerKind::conv, 6, 3, 1, 1},
        {LayerKind::prelu},
        {LayerKind::maxpool},
        {LayerKind::flatten},
        {LayerKind::fc, 24},
        {LayerKind::prelu},
        {LayerKind::fc, k},
    };
    s.taps = {{2, AuxKind::gap}, {5, AuxKind::identity}};
    return s;
}

TrainConfig quick_cfg(int epochs, int warmup, uint64_t seed = 11) {
    TrainConfig c;
    c.epochs = epochs;
    c.warmup = warmup;
    c.batch_size = 16;
    c.lr.base = 0.05;  // 0.1 overshoots on the tiny blob fixtures
    c.seed = seed;
    return c;
}

double train_accuracy(const TrainResult& r, const Dataset& data) {
    std::vector<int> pred = predict_softmax(r.model, data.images);
    int64_t hit = 0;
    for (size_t i = 0; i < pred.size(); ++i) hit += pred[i] == data.labels[i];
    return double(hit) / double(pred.size());
}

}  // namespace

TEST_CASE("train config validation") {
    TrainConfig c = quick_cfg(3, 1);
    c.validate(2);

    c.warmup = 4;
    CHECK_THROWS_AS(c.validate(2), ConfigError);
    c = quick_cfg(3, 1);
    c.batch_size = 0;
    CHECK_THROWS_AS(c.validate(2), ConfigError);
    c = quick_cfg(3, 1);
    c.adv_eps_lo = 0.5;
    c.adv_eps_hi = 0.1;
    CHECK_THROWS_AS(c.validate(2), ConfigError);
    c = quick_cfg(3, 1);
    c.pc_weights = {1.0};
    CHECK_THROWS_AS(c.validate(2), ConfigError);
    c.pc_weights = {1.0, 0.5};
    c.validate(2);
}

TEST_CASE("learning-rate schedule steps down at the named epochs") {
    LrSchedule lr;
    lr.base = 0.2;
    lr.decay_epochs = {2, 4};
    lr.decay_factor = 0.5;
    CHECK(lr.at(0) == doctest::Approx(0.2));
    CHECK(lr.at(1) == doctest::Approx(0.2));
    CHECK(lr.at(2) == doctest::Approx(0.1));
    CHECK(lr.at(3) == doctest::Approx(0.1));
    CHECK(lr.at(4) == doctest::Approx(0.05));
}

TEST_CASE("sgd_step applies only populated gradients") {
    Tensor a = Tensor::from_vec({2}, {1.0, 2.0}, true);
    Tensor b = Tensor::from_vec({2}, {5.0, 6.0}, true);
    a.grad()[0] = 0.5;
    a.grad()[1] = -1.0;
    std::vector<Tensor> params = {a, b};
    sgd_step(params, 0.1);
    CHECK(a.data()[0] == doctest::Approx(0.95).epsilon(1e-14));
    CHECK(a.data()[1] == doctest::Approx(2.1).epsilon(1e-14));
    CHECK(b.data()[0] == 5.0);  // no gradient, untouched
    CHECK(b.data()[1] == 6.0);
}

TEST_CASE("well-separated blobs train to full accuracy in a few epochs") {
    Dataset data = synth_blobs(3, 40, {1, 8, 8}, 0.02, 4);
    TrainResult r = train(blob_spec(), data, quick_cfg(5, 2));
    CHECK(train_accuracy(r, data) >= 0.99);

    REQUIRE(r.log.epochs.size() == 5);
    CHECK(r.log.epochs[0].phase == "warmup");
    CHECK(r.log.epochs[1].phase == "warmup");
    CHECK(r.log.epochs[2].phase == "joint");
    CHECK(r.log.epochs.back().clean_acc >= 0.99);
    CHECK(r.log.epochs.back().loss_total < r.log.epochs.front().loss_total);
    for (const EpochRecord& e : r.log.epochs) {
        CHECK(e.lr == doctest::Approx(0.05));
        CHECK(std::isfinite(e.loss_total));
    }
    // Joint epochs report conformity movement and centroid separation.
    CHECK(r.log.epochs.back().loss_pc != 0.0);
    CHECK(r.log.epochs.back().proto_min_dist > 0.0);
    REQUIRE(r.protos.size() == 2);
    CHECK(r.protos[0].centroids.shape() == std::vector<int64_t>{3, 6});
    CHECK(r.protos[1].centroids.shape() == std::vector<int64_t>{3, 24});
}

TEST_CASE("the warm-up phase is identical whether or not joint epochs follow") {
    Dataset data = synth_blobs(3, 20, {1, 8, 8}, 0.05, 8);

    // Same seed, same schedule: a 2-epoch all-warmup run must match the first
    // two epochs of a longer run bitwise, because the joint phase and its
    // extra randomness only begin afterwards.
    TrainResult all_warm = train(blob_spec(), data, quick_cfg(2, 2, 31));
    TrainResult with_joint = train(blob_spec(), data, quick_cfg(4, 2, 31));
    CHECK(all_warm.log.epochs[0].loss_total == with_joint.log.epochs[0].loss_total);
    CHECK(all_warm.log.epochs[1].loss_total == with_joint.log.epochs[1].loss_total);
    CHECK(all_warm.log.epochs[1].clean_acc == with_joint.log.epochs[1].clean_acc);

    TrainResult again = train(blob_spec(), data, quick_cfg(2, 2, 31));
    CHECK(again.model.param_checksum() == all_warm.model.param_checksum());

    // The joint phase moves both the network and the centroids.
    CHECK(with_joint.model.param_checksum() != all_warm.model.param_checksum());
}

TEST_CASE("adversarial augmentation changes the joint phase only") {
    Dataset data = synth_blobs(3, 20, {1, 8, 8}, 0.05, 9);

    TrainConfig plain = quick_cfg(3, 1, 13);
    TrainConfig adv = quick_cfg(3, 1, 13);
    adv.adv_mode = AdvMode::fgsm;
    adv.adv_eps_lo = 0.05;
    adv.adv_eps_hi = 0.2;

    TrainResult p = train(blob_spec(), data, plain);
    TrainResult a = train(blob_spec(), data, adv);
    CHECK(p.log.epochs[0].loss_total == a.log.epochs[0].loss_total);  // shared warm-up
    CHECK(p.model.param_checksum() != a.model.param_checksum());

    TrainConfig pgd = adv;
    pgd.adv_mode = AdvMode::pgd;
    pgd.adv_steps = 3;
    TrainResult g = train(blob_spec(), data, pgd);
    CHECK(g.model.param_checksum() != a.model.param_checksum());
    CHECK(g.log.epochs.back().phase == "joint");
}

TEST_CASE("black-box source trains on a different architecture") {
    Dataset data = synth_blobs(3, 30, {1, 8, 8}, 0.03, 21);
    Model src = make_black_box_source(data, 17, 3);
    CHECK(src.spec.name != blob_spec().name);
    CHECK(src.spec.taps.empty());
    std::vector<int> pred = predict_softmax(src, data.images);
    int64_t hit = 0;
    for (size_t i = 0; i < pred.size(); ++i) hit += pred[i] == data.labels[i];
    CHECK(double(hit) / double(pred.size()) > 0.8);
}

TEST_CASE("train log serializes with its header") {
    std::string dir = testutil::scratch_dir("trainlog");
    Dataset data = synth_blobs(2, 10, {1, 8, 8}, 0.05, 2);
    TrainResult r = train(blob_spec(2), data, quick_cfg(2, 1, 3));
    write_train_log(dir + "/log.csv", r.log, "# head");
    std::string text = testutil::read_file(dir + "/log.csv");
    CHECK(text.find("# head") == 0);
    CHECK(text.find("epoch,phase,lr") != std::string::npos);
    CHECK(text.find("joint") != std::string::npos);

    write_prototype_csv(dir + "/protos.csv", r.protos, "# head");
    std::string protos = testutil::read_file(dir + "/protos.csv");
    CHECK(protos.find("tap,class,dim,value") != std::string::npos);
}
