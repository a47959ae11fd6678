#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "deficit/retention.hpp"
#include "support/gradcheck.hpp"

using namespace deficit;

namespace {

using Vec = std::vector<double>;

ModelDims tiny_dims(std::size_t vocab = 8) {
    ModelDims d;
    d.vocab_size = vocab;
    d.embed_dim = 2;
    d.char_embed_dim = 2;
    d.hidden_dim = 2;
    return d;
}

// ---- straight-line reference forward pass (plain doubles, no tape) ----

Vec mat_vec(const Tensor& w, const Vec& x, const Tensor& b) {
    const std::size_t rows = w.shape()[0], cols = w.shape()[1];
    Vec out(rows);
    for (std::size_t i = 0; i < rows; ++i) {
        double acc = b[i];
        for (std::size_t j = 0; j < cols; ++j) acc += w[i * cols + j] * x[j];
        out[i] = acc;
    }
    return out;
}

Vec ref_gru_step(const GruParams& p, const Vec& x, const Vec& h) {
    const std::size_t n = p.hidden_dim;
    auto gate = [&](const Tensor& w, const Tensor& u, const Tensor& b, const Vec& hv) {
        Vec pre(n);
        for (std::size_t i = 0; i < n; ++i) {
            double acc = b[i];
            for (std::size_t j = 0; j < p.input_dim; ++j) acc += w[i * p.input_dim + j] * x[j];
            for (std::size_t j = 0; j < n; ++j) acc += u[i * n + j] * hv[j];
            pre[i] = acc;
        }
        return pre;
    };
    Vec r = gate(p.w_reset, p.u_reset, p.b_reset, h);
    Vec z = gate(p.w_update, p.u_update, p.b_update, h);
    for (auto& v : r) v = 1.0 / (1.0 + std::exp(-v));
    for (auto& v : z) v = 1.0 / (1.0 + std::exp(-v));
    Vec rh(n);
    for (std::size_t i = 0; i < n; ++i) rh[i] = r[i] * h[i];
    Vec c = gate(p.w_cand, p.u_cand, p.b_cand, rh);
    for (auto& v : c) v = std::tanh(v);
    Vec out(n);
    for (std::size_t i = 0; i < n; ++i) out[i] = (1.0 - z[i]) * h[i] + z[i] * c[i];
    return out;
}

Vec ref_embed(const Tensor& table, Id id) {
    const std::size_t cols = table.shape()[1];
    Vec out(cols);
    for (std::size_t j = 0; j < cols; ++j) out[j] = table[id * cols + j];
    return out;
}

Vec ref_encode_query(const ModelParams& m, const std::vector<Id>& ids) {
    const std::size_t h = m.dims.hidden_dim;
    Vec hf(h, 0.0), hb(h, 0.0);
    for (Id id : ids) hf = ref_gru_step(m.enc_fwd, ref_embed(m.embeddings.word_table, id), hf);
    for (auto it = ids.rbegin(); it != ids.rend(); ++it)
        hb = ref_gru_step(m.enc_bwd, ref_embed(m.embeddings.word_table, *it), hb);
    Vec z(h);
    for (std::size_t i = 0; i < h; ++i) z[i] = hf[i] * hb[i];
    return z;
}

Vec ref_encode_result(const ModelParams& m, const std::vector<Id>& chars) {
    Vec u(m.dims.hidden_dim, 0.0);
    for (Id c : chars) u = ref_gru_step(m.url_gru, ref_embed(m.embeddings.char_table, c), u);
    return u;
}

std::vector<Vec> ref_retention_forward(const ModelParams& m, const RetentionExample& ex,
                                       const Ablations& ab) {
    const std::size_t h = m.dims.hidden_dim;
    Vec z = ref_encode_query(m, ex.current_ids);
    Vec deficit(h, 0.0), summary(h, 0.0);
    if (!ex.past.empty() && (!ab.disable_deficit || !ab.disable_context)) {
        std::vector<Vec> past_z;
        for (const auto& step : ex.past) {
            Vec zp = ref_encode_query(m, step.query_ids);
            past_z.push_back(zp);
            if (!ab.disable_deficit) {
                Vec u = ref_encode_result(m, step.url_chars);
                for (std::size_t i = 0; i < h; ++i) deficit[i] += zp[i] - u[i];
            }
        }
        if (!ab.disable_context) {
            Vec s(h, 0.0);
            for (const Vec& zp : past_z) s = ref_gru_step(m.seq_gru, zp, s);
            summary = s;
        }
    }
    std::vector<Vec> out;
    Vec v(h, 0.0);
    for (std::size_t i = 0; i < ex.current_ids.size(); ++i) {
        v = ref_gru_step(m.dec_gru, z, v);
        Vec x;
        x.insert(x.end(), v.begin(), v.end());
        x.insert(x.end(), deficit.begin(), deficit.end());
        x.insert(x.end(), summary.begin(), summary.end());
        Vec logits = mat_vec(m.head_w, x, m.head_b);
        const double mx = std::max(logits[0], logits[1]);
        const double e0 = std::exp(logits[0] - mx), e1 = std::exp(logits[1] - mx);
        out.push_back({e0 / (e0 + e1), e1 / (e0 + e1)});
    }
    return out;
}

RetentionExample sample_example() {
    RetentionExample ex;
    ex.current_ids = {2, 3, 4};
    ex.words = {"one", "two", "three"};
    ex.labels = {1, 0, 1};
    StepInput s1;
    s1.query_ids = {5, 2};
    s1.url_chars = url_char_ids({"ab.c", "d"}, 32);
    StepInput s2;
    s2.query_ids = {6, 7, 3};
    ex.past = {s1, s2};
    return ex;
}

}  // namespace

TEST_CASE("decode_steps: zero decoder, single step, scalar recurrence") {
    Tape tape;
    GruParams zero = GruParams::zeros(2, 2);
    Tensor z = Tensor::from_vector({0.5, -0.5});
    auto steps = decode_steps(tape, z, 3, zero);
    REQUIRE(steps.size() == 3);
    for (const auto& v : steps)
        for (std::size_t i = 0; i < v.size(); ++i) CHECK(v[i] == 0.0);

    Rng rng(3);
    GruParams dec = GruParams::init(2, 2, rng);
    Tensor v1 = decode_steps(tape, z, 1, dec)[0];
    Tensor direct = gru_step(tape, dec, z, Tensor(Shape{2}));
    for (std::size_t i = 0; i < 2; ++i) CHECK(v1[i] == direct[i]);

    GruParams scalar = GruParams::zeros(1, 1);
    scalar.w_update[0] = 0.8;
    scalar.w_cand[0] = 1.3;
    scalar.u_cand[0] = -0.4;
    double h = 0.0;
    const double x = 0.7;
    for (int t = 0; t < 2; ++t) {
        const double zg = 1.0 / (1.0 + std::exp(-0.8 * x));
        const double r = 0.5;  // all reset weights zero
        const double c = std::tanh(1.3 * x - 0.4 * (r * h));
        h = (1 - zg) * h + zg * c;
    }
    auto two = decode_steps(tape, Tensor::from_vector({x}), 2, scalar);
    CHECK(two[1][0] == Catch::Approx(h).margin(1e-12));

    CHECK_THROWS_AS(decode_steps(tape, z, 0, dec), std::invalid_argument);
}

TEST_CASE("zeroed head yields the uniform distribution and retention ties") {
    ModelParams m = ModelParams::init(Task::retention, tiny_dims(), 11);
    m.head_w.fill(0.0);
    m.head_b.fill(0.0);
    auto preds = predict_retention(m, sample_example());
    REQUIRE(preds.size() == 3);
    for (const auto& p : preds) {
        CHECK(p.p_removal == 0.5);
        CHECK(p.p_retention == 0.5);
        CHECK(p.hard_label == 1);  // tie goes to retention
    }
}

TEST_CASE("saturated retention bias forces the retention class") {
    ModelParams m = ModelParams::init(Task::retention, tiny_dims(), 12);
    m.head_w.fill(0.0);
    m.head_b[0] = 0.0;
    m.head_b[1] = 50.0;
    for (const auto& p : predict_retention(m, sample_example())) {
        CHECK(p.p_retention > 0.999999);
        CHECK(p.hard_label == 1);
    }
}

TEST_CASE("forward pass matches an independent straight-line implementation") {
    for (std::uint64_t seed : {101u, 202u, 303u}) {
        ModelParams m = ModelParams::init(Task::retention, tiny_dims(), seed);
        RetentionExample ex = sample_example();
        for (Ablations ab : {Ablations{}, Ablations{.disable_deficit = true},
                             Ablations{.disable_deficit = true, .disable_context = true}}) {
            auto got = predict_retention(m, ex, ab);
            auto want = ref_retention_forward(m, ex, ab);
            REQUIRE(got.size() == want.size());
            for (std::size_t i = 0; i < got.size(); ++i) {
                CHECK(got[i].p_removal == Catch::Approx(want[i][0]).margin(1e-12));
                CHECK(got[i].p_retention == Catch::Approx(want[i][1]).margin(1e-12));
            }
        }
    }
}

TEST_CASE("per-word distributions sum to one") {
    ModelParams m = ModelParams::init(Task::retention, tiny_dims(), 21);
    for (const auto& p : predict_retention(m, sample_example()))
        CHECK(std::abs(p.p_removal + p.p_retention - 1.0) < 1e-12);
}

TEST_CASE("metrics reproduce the worked accuracy example") {
    std::vector<std::vector<int>> predictions{{0, 1, 1, 0}, {0, 1, 0, 1}};
    std::vector<std::vector<int>> labels{{0, 1, 1, 1}, {1, 1, 0, 0}};
    RetentionMetrics m = compute_retention_metrics(predictions, labels);
    REQUIRE(m.per_query_accuracies.size() == 2);
    CHECK(m.per_query_accuracies[0] == 0.75);
    CHECK(m.per_query_accuracies[1] == 0.5);
    CHECK(m.accuracy == 0.625);
    CHECK(m.n_queries == 2);
    CHECK(m.n_words == 8);
}

TEST_CASE("metrics: perfect predictions and degenerate F1") {
    std::vector<std::vector<int>> labels{{1, 0, 1}, {0, 1, 1}};
    RetentionMetrics perfect = compute_retention_metrics(labels, labels);
    CHECK(perfect.accuracy == 1.0);
    CHECK(perfect.f1_removal == 1.0);
    CHECK(perfect.precision_removal == 1.0);
    CHECK(perfect.recall_removal == 1.0);

    // all-retention predictor against data that contains removals
    std::vector<std::vector<int>> all_ones{{1, 1, 1}, {1, 1, 1}};
    RetentionMetrics m = compute_retention_metrics(all_ones, labels);
    CHECK(m.f1_removal == 0.0);
    CHECK(m.precision_removal == 0.0);
    CHECK(m.recall_removal == 0.0);
    CHECK(std::isfinite(m.f1_removal));
}

TEST_CASE("majority accuracy equals the mean per-query retention fraction") {
    auto make = [](std::vector<std::vector<int>> labels) {
        std::vector<RetentionExample> out;
        for (auto& l : labels) {
            RetentionExample ex;
            ex.current_ids.assign(l.size(), 2);
            ex.labels = l;
            out.push_back(ex);
        }
        return out;
    };
    CHECK(majority_baseline(make({{1, 1}, {1, 0}})).accuracy == 0.75);
    CHECK(majority_baseline(make({{1, 1}, {1, 1, 1}})).accuracy == 1.0);
    CHECK(majority_baseline(make({{0, 0}, {0}})).accuracy == 0.0);

    // uniform query length: accuracy equals the word-level retention prior
    std::vector<std::vector<int>> labels;
    Rng rng(8);
    for (int q = 0; q < 40; ++q) {
        std::vector<int> l(5);
        for (auto& v : l) v = rand_bernoulli(rng, 0.6) ? 1 : 0;
        labels.push_back(l);
    }
    RetentionMetrics m = majority_baseline(make(labels));
    std::size_t ones = 0, total = 0;
    for (const auto& l : labels) {
        for (int v : l) ones += v;
        total += l.size();
    }
    CHECK(m.accuracy == Catch::Approx(static_cast<double>(ones) / total).margin(1e-12));
    CHECK(m.accuracy == Catch::Approx(m.accuracy_micro).margin(1e-12));
}

TEST_CASE("evaluation is invariant to dataset ordering") {
    ModelParams m = ModelParams::init(Task::retention, tiny_dims(), 31);
    std::vector<RetentionExample> data;
    Rng rng(32);
    for (int i = 0; i < 12; ++i) {
        RetentionExample ex;
        const std::size_t n = 2 + rand_index(rng, 3);
        for (std::size_t j = 0; j < n; ++j) ex.current_ids.push_back(static_cast<Id>(2 + rand_index(rng, 6)));
        ex.labels.assign(n, 0);
        ex.labels[0] = 1;
        data.push_back(ex);
    }
    RetentionMetrics a = eval_retention(data, m);
    std::reverse(data.begin(), data.end());
    RetentionMetrics b = eval_retention(data, m);
    CHECK(a.accuracy == b.accuracy);
    CHECK(a.f1_removal == b.f1_removal);
    CHECK(a.accuracy_micro == b.accuracy_micro);
}

TEST_CASE("with the deficit zeroed, predictions ignore clicked urls") {
    ModelParams m = ModelParams::init(Task::retention, tiny_dims(), 41);
    RetentionExample ex = sample_example();
    Ablations no_deficit{.disable_deficit = true};
    auto before = predict_retention(m, ex, no_deficit);
    RetentionExample changed = ex;
    changed.past[0].url_chars = url_char_ids({"totally.different/urls"}, 32);
    changed.past[1].url_chars = url_char_ids({"more"}, 32);
    auto after = predict_retention(m, changed, no_deficit);
    for (std::size_t i = 0; i < before.size(); ++i) {
        CHECK(before[i].p_retention == after[i].p_retention);
        CHECK(before[i].p_removal == after[i].p_removal);
    }

    // with the context zeroed too, predictions depend only on the current query
    Ablations neither{.disable_deficit = true, .disable_context = true};
    RetentionExample stripped = ex;
    stripped.past.clear();
    auto with_past = predict_retention(m, ex, neither);
    auto without = predict_retention(m, stripped, neither);
    for (std::size_t i = 0; i < with_past.size(); ++i)
        CHECK(with_past[i].p_retention == without[i].p_retention);
}

TEST_CASE("full retention loss passes the finite-difference check") {
    ModelParams m = ModelParams::init(Task::retention, tiny_dims(), 51);
    RetentionExample ex;
    ex.current_ids = {2, 3};
    ex.labels = {1, 0};
    StepInput past;
    past.query_ids = {4, 5};
    past.url_chars = url_char_ids({"ab"}, 16);
    ex.past = {past};

    auto loss_of = [&]() {
        Tape tape;
        auto probs = retention_forward(tape, m, ex, {});
        std::vector<Tensor> picked;
        for (auto& p : probs) picked.push_back(at(tape, p, 1));
        Tensor pred = concat(tape, picked);
        Tensor target = Tensor::from_vector({1.0, 0.0});
        return bce_loss(tape, pred, target);
    };

    m.zero_grad();
    {
        Tape tape;
        auto probs = retention_forward(tape, m, ex, {});
        std::vector<Tensor> picked;
        for (auto& p : probs) picked.push_back(at(tape, p, 1));
        Tensor pred = concat(tape, picked);
        Tensor target = Tensor::from_vector({1.0, 0.0});
        Tensor loss = bce_loss(tape, pred, target);
        tape.backward(loss);
    }
    std::vector<Tensor> tensors;
    std::vector<std::vector<double>> ad;
    for (auto& np : m.parameters()) {
        tensors.push_back(np.tensor);
        ad.push_back(np.tensor.grad_values());
    }
    auto fwd = [&]() { return loss_of().item(); };
    auto report = gradcheck::compare(tensors, ad, fwd);
    INFO("checked " << report.checked << " partials");
    CHECK(report.max_rel_err < 1e-4);
}

TEST_CASE("every parameter tensor receives gradient from the full forward") {
    ModelParams m = ModelParams::init(Task::retention, tiny_dims(), 61);
    RetentionExample ex = sample_example();
    m.zero_grad();
    Tape tape;
    auto probs = retention_forward(tape, m, ex, {});
    std::vector<Tensor> picked;
    for (auto& p : probs) picked.push_back(at(tape, p, 1));
    Tensor pred = concat(tape, picked);
    Tensor target = Tensor::from_vector({1.0, 0.0, 1.0});
    Tensor loss = bce_loss(tape, pred, target);
    tape.backward(loss);
    for (const auto& np : m.parameters()) {
        bool any = false;
        for (std::size_t i = 0; i < np.tensor.size(); ++i) any |= np.tensor.grad()[i] != 0.0;
        INFO(np.name);
        CHECK(any);
    }
}

TEST_CASE("training: zero learning rate leaves parameters unchanged") {
    ModelParams m = ModelParams::init(Task::retention, tiny_dims(), 71);
    std::vector<double> before;
    for (const auto& np : m.parameters())
        before.insert(before.end(), np.tensor.values().begin(), np.tensor.values().end());
    std::vector<RetentionExample> data{sample_example()};
    AdamState adam;
    adam.alpha = 0.0;
    Rng shuffle_rng(1);
    TrainOptions opt;
    opt.epochs = 3;
    auto losses = train_retention(m, adam, shuffle_rng, data, opt);
    REQUIRE(losses.size() == 3);
    CHECK(losses[0] == losses[1]);
    CHECK(losses[1] == losses[2]);
    std::vector<double> after;
    for (const auto& np : m.parameters())
        after.insert(after.end(), np.tensor.values().begin(), np.tensor.values().end());
    CHECK(before == after);
}

TEST_CASE("training is deterministic for a fixed seed") {
    auto run = [] {
        ModelParams m = ModelParams::init(Task::retention, tiny_dims(), 81);
        std::vector<RetentionExample> data;
        for (int i = 0; i < 6; ++i) {
            RetentionExample ex = sample_example();
            ex.labels = {i % 2, 1, (i / 2) % 2};
            data.push_back(ex);
        }
        AdamState adam;
        Rng shuffle_rng(4);
        TrainOptions opt;
        opt.epochs = 4;
        opt.batch_size = 2;
        return train_retention(m, adam, shuffle_rng, data, opt);
    };
    CHECK(run() == run());
}

TEST_CASE("a single example is memorized by an overfit run") {
    ModelDims dims;
    dims.vocab_size = 16;
    dims.embed_dim = 4;
    dims.char_embed_dim = 2;
    dims.hidden_dim = 8;
    ModelParams m = ModelParams::init(Task::retention, dims, 91);
    RetentionExample ex;
    ex.current_ids = {2, 3, 4, 5};
    ex.labels = {1, 0, 0, 1};
    StepInput past;
    past.query_ids = {6, 7};
    past.url_chars = url_char_ids({"xy"}, 16);
    ex.past = {past};
    std::vector<RetentionExample> data{ex};
    AdamState adam;
    adam.alpha = 0.01;
    Rng shuffle_rng(2);
    TrainOptions opt;
    opt.epochs = 500;
    opt.early_stop_accuracy = 1.0;
    train_retention(m, adam, shuffle_rng, data, opt);
    CHECK(eval_retention(data, m).accuracy == 1.0);
}

TEST_CASE("training rejects an empty dataset") {
    ModelParams m = ModelParams::init(Task::retention, tiny_dims(), 99);
    AdamState adam;
    Rng rng(1);
    std::vector<RetentionExample> empty;
    CHECK_THROWS_AS(train_retention(m, adam, rng, empty, {}), std::invalid_argument);
    CHECK_THROWS_AS(eval_retention(empty, m), std::invalid_argument);
}
