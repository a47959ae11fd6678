// Word-retention prediction: forward pass, training loop and the
// accuracy / removal-F1 evaluation protocol.

#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <stdexcept>
#include <vector>

#include "deficit/adam.hpp"
#include "deficit/data.hpp"
#include "deficit/model.hpp"

namespace deficit {

/// Per-word class distributions (p_removal, p_retention), graph-connected.
inline std::vector<Tensor> retention_forward(Tape& tape, const ModelParams& params,
                                             const RetentionExample& ex, const Ablations& ab) {
    if (params.task != Task::retention)
        throw std::invalid_argument("retention_forward: params were built for another task");
    EncodedQuery enc = encode_query(tape, ex.current_ids, params.embeddings.word_table, params.enc_fwd,
                                    params.enc_bwd);
    std::vector<Tensor> decoded = decode_steps(tape, enc.z, ex.current_ids.size(), params.dec_gru);
    ContextSignals ctx = encode_context_signals(tape, params, ex.past, ab);
    std::vector<Tensor> probs;
    probs.reserve(decoded.size());
    for (const Tensor& v : decoded) {
        Tensor x = concat(tape, {v, ctx.deficit, ctx.summary});
        probs.push_back(softmax(tape, affine(tape, params.head_w, x, params.head_b)));
    }
    return probs;
}

struct WordPrediction {
    double p_removal = 0.0;
    double p_retention = 0.0;
    int hard_label = 1;  // argmax; an exact tie goes to retention
};

inline std::vector<WordPrediction> predict_retention(const ModelParams& params, const RetentionExample& ex,
                                                     const Ablations& ab = {}) {
    Tape tape;  // discarded; inference only
    std::vector<Tensor> probs = retention_forward(tape, params, ex, ab);
    std::vector<WordPrediction> out;
    out.reserve(probs.size());
    for (const Tensor& p : probs)
        out.push_back({p[0], p[1], p[1] >= p[0] ? 1 : 0});
    return out;
}

// ---------------------------------------------------------------------------
// metrics
// ---------------------------------------------------------------------------

struct RetentionMetrics {
    double accuracy = 0.0;        // mean of per-query accuracies
    double accuracy_micro = 0.0;  // over all words, reported alongside
    double f1_removal = 0.0;      // pooled over words
    double precision_removal = 0.0;
    double recall_removal = 0.0;
    std::vector<double> per_query_accuracies;
    std::size_t n_queries = 0;
    std::size_t n_words = 0;
};

/// Accuracy is per-query (correct words / query length), averaged unweighted
/// over queries; removal-class precision/recall/F1 are pooled over all words.
/// F1 is 0 when precision + recall is 0.
inline RetentionMetrics compute_retention_metrics(const std::vector<std::vector<int>>& predictions,
                                                  const std::vector<std::vector<int>>& labels) {
    if (predictions.size() != labels.size())
        throw std::invalid_argument("compute_retention_metrics: prediction/label count mismatch");
    if (predictions.empty()) throw std::invalid_argument("compute_retention_metrics: empty dataset");
    RetentionMetrics m;
    std::size_t correct_words = 0;
    std::size_t tp = 0, fp = 0, fn = 0;  // removal = positive class (label 0)
    for (std::size_t q = 0; q < predictions.size(); ++q) {
        const auto& pred = predictions[q];
        const auto& gold = labels[q];
        if (pred.size() != gold.size())
            throw std::invalid_argument("compute_retention_metrics: length mismatch in query " +
                                        std::to_string(q));
        if (pred.empty()) throw std::invalid_argument("compute_retention_metrics: empty query");
        std::size_t correct = 0;
        for (std::size_t i = 0; i < pred.size(); ++i) {
            if (pred[i] == gold[i]) ++correct;
            const bool pred_removal = pred[i] == 0;
            const bool gold_removal = gold[i] == 0;
            if (pred_removal && gold_removal) ++tp;
            if (pred_removal && !gold_removal) ++fp;
            if (!pred_removal && gold_removal) ++fn;
        }
        m.per_query_accuracies.push_back(static_cast<double>(correct) / static_cast<double>(pred.size()));
        correct_words += correct;
        m.n_words += pred.size();
    }
    m.n_queries = predictions.size();
    m.accuracy = std::accumulate(m.per_query_accuracies.begin(), m.per_query_accuracies.end(), 0.0) /
                 static_cast<double>(m.n_queries);
    m.accuracy_micro = static_cast<double>(correct_words) / static_cast<double>(m.n_words);
    m.precision_removal = (tp + fp) == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(tp + fp);
    m.recall_removal = (tp + fn) == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(tp + fn);
    const double pr = m.precision_removal + m.recall_removal;
    m.f1_removal = pr == 0.0 ? 0.0 : 2.0 * m.precision_removal * m.recall_removal / pr;
    return m;
}

inline RetentionMetrics eval_retention(std::span<const RetentionExample> dataset, const ModelParams& params,
                                       const Ablations& ab = {}) {
    if (dataset.empty()) throw std::invalid_argument("eval_retention: empty dataset");
    std::vector<std::vector<int>> predictions, labels;
    predictions.reserve(dataset.size());
    labels.reserve(dataset.size());
    for (const RetentionExample& ex : dataset) {
        std::vector<int> hard;
        for (const WordPrediction& w : predict_retention(params, ex, ab)) hard.push_back(w.hard_label);
        predictions.push_back(std::move(hard));
        labels.push_back(ex.labels);
    }
    return compute_retention_metrics(predictions, labels);
}

/// Marks every word as retained.
inline RetentionMetrics majority_baseline(std::span<const RetentionExample> dataset) {
    if (dataset.empty()) throw std::invalid_argument("majority_baseline: empty dataset");
    std::vector<std::vector<int>> predictions, labels;
    for (const RetentionExample& ex : dataset) {
        predictions.emplace_back(ex.labels.size(), 1);
        labels.push_back(ex.labels);
    }
    return compute_retention_metrics(predictions, labels);
}

// ---------------------------------------------------------------------------
// training
// ---------------------------------------------------------------------------

/// Mean binary cross-entropy over all words of all examples in the batch,
/// one Adam step per batch. Returns the per-epoch mean loss (weighted by
/// word count). Examples are reshuffled every epoch from `shuffle_rng`.
inline std::vector<double> train_retention(ModelParams& params, AdamState& adam, Rng& shuffle_rng,
                                           std::span<const RetentionExample> train,
                                           const TrainOptions& opt) {
    if (train.empty()) throw std::invalid_argument("train_retention: empty dataset");
    std::vector<NamedParam> named = params.parameters();
    std::vector<std::size_t> order(train.size());
    std::iota(order.begin(), order.end(), 0);
    std::vector<double> epoch_losses;
    for (std::size_t epoch = 0; epoch < opt.epochs; ++epoch) {
        shuffle(shuffle_rng, order);
        double loss_sum = 0.0;
        std::size_t word_count = 0;
        for (std::size_t start = 0; start < order.size(); start += opt.batch_size) {
            const std::size_t end = std::min(order.size(), start + opt.batch_size);
            Tape tape;
            std::vector<Tensor> word_probs;
            std::vector<double> word_targets;
            for (std::size_t k = start; k < end; ++k) {
                const RetentionExample& ex = train[order[k]];
                std::vector<Tensor> probs = retention_forward(tape, params, ex, opt.ablations);
                for (std::size_t i = 0; i < probs.size(); ++i) {
                    word_probs.push_back(at(tape, probs[i], 1));
                    word_targets.push_back(static_cast<double>(ex.labels[i]));
                }
            }
            Tensor pred = concat(tape, word_probs);
            Tensor target = Tensor::from_vector(word_targets);
            Tensor loss = bce_loss(tape, pred, target);
            tape.backward(loss);
            freeze_padding_rows(params);
            adam_step(named, adam);
            loss_sum += loss.item() * static_cast<double>(word_targets.size());
            word_count += word_targets.size();
        }
        epoch_losses.push_back(loss_sum / static_cast<double>(word_count));
        if (opt.early_stop_accuracy > 0.0) {
            if (eval_retention(train, params, opt.ablations).accuracy_micro >= opt.early_stop_accuracy)
                break;
        }
    }
    return epoch_losses;
}

}  // namespace deficit
