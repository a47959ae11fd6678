// Full model parameter set and the context-signal forward pass shared by
// both prediction tasks.

#pragma once

#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "deficit/encoders.hpp"
#include "deficit/gru.hpp"
#include "deficit/tensor.hpp"

namespace deficit {

enum class Task { retention, selection };

struct ModelDims {
    std::size_t vocab_size = 0;
    std::size_t embed_dim = 64;
    std::size_t char_embed_dim = 16;
    std::size_t hidden_dim = 64;
};

/// Channel switches. Zeroing a channel never changes parameter counts, so
/// ablated and full models differ only in the signal, not in capacity.
struct Ablations {
    bool disable_deficit = false;
    bool disable_context = false;

    bool context_needed() const { return !disable_context; }
    bool deficit_needed() const { return !disable_deficit; }
    bool past_needed() const { return context_needed() || deficit_needed(); }
};

struct ModelParams {
    Task task = Task::retention;
    ModelDims dims;
    bool chronological_context = false;  // feed past queries oldest-first instead of most-recent-first

    EmbeddingTable embeddings;
    GruParams enc_fwd;   // query encoder, forward direction
    GruParams enc_bwd;   // query encoder, backward direction
    GruParams url_gru;   // character-level result encoder
    GruParams seq_gru;   // past-query sequence encoder
    GruParams dec_gru;   // per-word / pooling decoder
    Tensor head_w;       // retention: (2 x 3h); selection: (1 x 3h)
    Tensor head_b;

    static ModelParams init(Task task, const ModelDims& dims, std::uint64_t seed) {
        if (dims.vocab_size < 2) throw std::invalid_argument("ModelParams: vocab_size must be >= 2");
        Rng rng(seed);
        ModelParams p;
        p.task = task;
        p.dims = dims;
        p.embeddings = EmbeddingTable::init(dims.vocab_size, dims.embed_dim, dims.char_embed_dim, rng);
        p.enc_fwd = GruParams::init(dims.embed_dim, dims.hidden_dim, rng);
        p.enc_bwd = GruParams::init(dims.embed_dim, dims.hidden_dim, rng);
        p.url_gru = GruParams::init(dims.char_embed_dim, dims.hidden_dim, rng);
        p.seq_gru = GruParams::init(dims.hidden_dim, dims.hidden_dim, rng);
        p.dec_gru = GruParams::init(dims.hidden_dim, dims.hidden_dim, rng);
        const std::size_t classes = task == Task::retention ? 2 : 1;
        p.head_w = Tensor(Shape{classes, 3 * dims.hidden_dim}, true);
        for (std::size_t i = 0; i < p.head_w.size(); ++i)
            p.head_w[i] = rand_range(rng, -kInitRange, kInitRange);
        p.head_b = Tensor(Shape{classes}, true);
        return p;
    }

    /// Stable name -> tensor listing; the order defines the optimizer slots
    /// and the checkpoint layout.
    std::vector<NamedParam> parameters() const {
        std::vector<NamedParam> out;
        out.push_back({"word_embedding", embeddings.word_table});
        out.push_back({"char_embedding", embeddings.char_table});
        enc_fwd.append_parameters("enc_fwd", out);
        enc_bwd.append_parameters("enc_bwd", out);
        url_gru.append_parameters("url_gru", out);
        seq_gru.append_parameters("seq_gru", out);
        dec_gru.append_parameters("dec_gru", out);
        out.push_back({"head_w", head_w});
        out.push_back({"head_b", head_b});
        return out;
    }

    void zero_grad() {
        for (auto& p : parameters()) p.tensor.zero_grad();
    }
};

struct ContextSignals {
    Tensor deficit;  // D, zero vector when ablated or no history
    Tensor summary;  // s, zero vector when ablated or no history
};

/// Encodes up to P past steps (given most recent first) into the aggregate
/// information deficit and the past-query summary. Ablated channels are
/// returned as zero vectors without touching their parameters, which leaves
/// predictions and gradients exactly as if the channel were multiplied out.
inline ContextSignals encode_context_signals(Tape& tape, const ModelParams& params,
                                             std::span<const StepInput> past, const Ablations& ab) {
    const std::size_t h = params.dims.hidden_dim;
    ContextSignals out{Tensor(Shape{h}), Tensor(Shape{h})};
    if (past.empty() || !ab.past_needed()) return out;

    std::vector<Tensor> past_z;
    past_z.reserve(past.size());
    std::vector<Tensor> deficits;
    deficits.reserve(past.size());
    for (const StepInput& step : past) {
        EncodedQuery enc = encode_query(tape, step.query_ids, params.embeddings.word_table,
                                        params.enc_fwd, params.enc_bwd);
        past_z.push_back(enc.z);
        if (ab.deficit_needed()) {
            Tensor u = encode_result(tape, step.url_chars, params.embeddings.char_table, params.url_gru);
            deficits.push_back(info_deficit(tape, enc.z, u));
        }
    }
    if (ab.deficit_needed()) out.deficit = aggregate_deficit(tape, deficits, h);
    if (ab.context_needed()) {
        if (params.chronological_context) {
            std::vector<Tensor> chron(past_z.rbegin(), past_z.rend());
            out.summary = encode_context(tape, chron, params.seq_gru);
        } else {
            out.summary = encode_context(tape, past_z, params.seq_gru);
        }
    }
    return out;
}

/// Decoder pass: the query representation is repeated n times and fed to the
/// decoder GRU from a zero state; returns v_1..v_n.
inline std::vector<Tensor> decode_steps(Tape& tape, const Tensor& z, std::size_t n, const GruParams& dec) {
    if (n == 0) throw std::invalid_argument("decode_steps: n must be >= 1");
    std::vector<Tensor> repeated(n, z);
    Tensor v0(Shape{dec.hidden_dim});
    return gru_forward(tape, dec, repeated, v0);
}

struct TrainOptions {
    std::size_t epochs = 10;
    std::size_t batch_size = 32;
    Ablations ablations;
    /// Stop once training micro accuracy reaches this value; 0 disables the
    /// check (and the extra per-epoch evaluation pass).
    double early_stop_accuracy = 0.0;
};

/// Keeps the padding rows of both embedding tables out of the update.
inline void freeze_padding_rows(ModelParams& params) {
    Tensor& wt = params.embeddings.word_table;
    std::fill(wt.grad(), wt.grad() + params.dims.embed_dim, 0.0);
    Tensor& ct = params.embeddings.char_table;
    std::fill(ct.grad(), ct.grad() + params.dims.char_embed_dim, 0.0);
}

}  // namespace deficit
