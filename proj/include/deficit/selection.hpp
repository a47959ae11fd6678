// Next-query selection: co-occurrence candidate generation, the similarity
// scoring head, MAE training, argmax selection and MRR evaluation.

#pragma once

#include <algorithm>
#include <map>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "deficit/adam.hpp"
#include "deficit/data.hpp"
#include "deficit/model.hpp"

namespace deficit {

inline constexpr std::size_t kDefaultCandidateCount = 20;

// ---------------------------------------------------------------------------
// candidate generation ("most popular suggestion")
// ---------------------------------------------------------------------------

/// Adjacent-pair co-occurrence counts over normalized query strings. Built
/// from the train split only; the construction API never sees dev or test
/// sessions.
class CooccurrenceIndex {
public:
    static CooccurrenceIndex build(std::span<const Session> train_sessions) {
        CooccurrenceIndex index;
        for (const Session& s : train_sessions) {
            for (std::size_t t = 0; t + 1 < s.steps.size(); ++t) {
                if (s.steps[t].words.empty() || s.steps[t + 1].words.empty()) continue;
                const std::string cur = join_words(s.steps[t].words);
                const std::string nxt = join_words(s.steps[t + 1].words);
                ++index.counts_[cur][nxt];
                ++index.next_freq_[nxt];
            }
        }
        return index;
    }

    /// Top-k most frequent followers of `query`, count-descending with
    /// lexicographic tie-break.
    std::vector<std::string> top_followers(const std::string& query, std::size_t k) const {
        auto it = counts_.find(query);
        if (it == counts_.end()) return {};
        return top_of(it->second, k);
    }

    /// Top-k queries by how often they appear as a next query anywhere.
    std::vector<std::string> global_top(std::size_t k) const { return top_of(next_freq_, k); }

    bool contains(const std::string& query) const { return counts_.count(query) != 0; }
    std::size_t size() const { return counts_.size(); }

private:
    static std::vector<std::string> top_of(const std::map<std::string, long>& freq, std::size_t k) {
        std::vector<std::pair<std::string, long>> ordered(freq.begin(), freq.end());
        std::stable_sort(ordered.begin(), ordered.end(),
                         [](const auto& a, const auto& b) { return a.second > b.second; });
        std::vector<std::string> out;
        for (const auto& [q, c] : ordered) {
            if (out.size() >= k) break;
            out.push_back(q);
        }
        return out;
    }

    std::map<std::string, std::map<std::string, long>> counts_;
    std::map<std::string, long> next_freq_;
};

struct SelectionExample {
    std::vector<Id> current_ids;
    std::vector<StepInput> past;
    std::vector<std::string> candidates;          // normalized, no duplicates
    std::vector<std::vector<Id>> candidate_ids;
    std::size_t truth_index = 0;
};

/// Top-K followers of the current query with the ground truth injected
/// (deduplicated). Queries with fewer than K followers, including unseen
/// ones, are topped up from the globally most frequent next queries.
inline std::vector<std::string> build_candidates(const CooccurrenceIndex& index,
                                                 const std::string& current_norm,
                                                 const std::string& truth_norm, std::size_t k) {
    std::vector<std::string> candidates = index.top_followers(current_norm, k);
    if (candidates.size() < k) {
        for (std::string& g : index.global_top(k)) {
            if (candidates.size() >= k) break;
            if (std::find(candidates.begin(), candidates.end(), g) == candidates.end())
                candidates.push_back(std::move(g));
        }
    }
    if (std::find(candidates.begin(), candidates.end(), truth_norm) == candidates.end())
        candidates.push_back(truth_norm);
    return candidates;
}

/// Fills scaffolds into scorable examples; scaffolds whose candidate set
/// would have fewer than two entries (or whose candidates cannot be encoded)
/// are dropped.
inline std::vector<SelectionExample> make_selection_examples(std::span<const SelectionScaffold> scaffolds,
                                                             const CooccurrenceIndex& index,
                                                             const Vocabulary& vocab, std::size_t k) {
    std::vector<SelectionExample> out;
    for (const SelectionScaffold& sc : scaffolds) {
        std::vector<std::string> candidates = build_candidates(index, sc.current_norm, sc.truth_norm, k);
        SelectionExample ex;
        for (const std::string& c : candidates) {
            const std::vector<std::string> words = tokenize(c);
            if (words.empty()) continue;
            if (c == sc.truth_norm) ex.truth_index = ex.candidates.size();
            ex.candidates.push_back(c);
            ex.candidate_ids.push_back(vocab.lookup_all(words));
        }
        if (ex.candidates.size() < 2) continue;
        ex.current_ids = sc.current_ids;
        ex.past = sc.past;
        out.push_back(std::move(ex));
    }
    return out;
}

// ---------------------------------------------------------------------------
// scoring
// ---------------------------------------------------------------------------

/// Single-vector query representation: the last decoder output over the
/// n-times-repeated encoding.
inline Tensor pool_query(Tape& tape, const Tensor& z, std::size_t n, const GruParams& dec) {
    return decode_steps(tape, z, n, dec).back();
}

/// sigmoid(W'·[z_q ⊗ z_j, D, s] + b').
inline Tensor score_candidate(Tape& tape, const Tensor& z_q, const Tensor& z_j, const Tensor& deficit,
                              const Tensor& summary, const Tensor& head_w, const Tensor& head_b) {
    Tensor sim = mul(tape, z_q, z_j);
    Tensor x = concat(tape, {sim, deficit, summary});
    return sigmoid(tape, affine(tape, head_w, x, head_b));
}

/// Scores every candidate of one example; outputs are scalar tensors in (0,1).
inline std::vector<Tensor> selection_forward(Tape& tape, const ModelParams& params,
                                             const SelectionExample& ex, const Ablations& ab) {
    if (params.task != Task::selection)
        throw std::invalid_argument("selection_forward: params were built for another task");
    if (ex.candidates.empty()) throw std::invalid_argument("selection_forward: empty candidate set");
    EncodedQuery enc = encode_query(tape, ex.current_ids, params.embeddings.word_table, params.enc_fwd,
                                    params.enc_bwd);
    Tensor z_q = pool_query(tape, enc.z, ex.current_ids.size(), params.dec_gru);
    ContextSignals ctx = encode_context_signals(tape, params, ex.past, ab);
    std::vector<Tensor> scores;
    scores.reserve(ex.candidate_ids.size());
    for (const auto& cand_ids : ex.candidate_ids) {
        EncodedQuery cand = encode_query(tape, cand_ids, params.embeddings.word_table, params.enc_fwd,
                                         params.enc_bwd);
        Tensor z_j = pool_query(tape, cand.z, cand_ids.size(), params.dec_gru);
        scores.push_back(score_candidate(tape, z_q, z_j, ctx.deficit, ctx.summary, params.head_w,
                                         params.head_b));
    }
    return scores;
}

inline std::vector<double> score_candidates(const ModelParams& params, const SelectionExample& ex,
                                            const Ablations& ab = {}) {
    Tape tape;
    std::vector<double> out;
    for (const Tensor& s : selection_forward(tape, params, ex, ab)) out.push_back(s.item());
    return out;
}

/// Argmax over candidate scores; ties go to the lowest index.
inline std::size_t select_next(const ModelParams& params, const SelectionExample& ex,
                               const Ablations& ab = {}) {
    const std::vector<double> scores = score_candidates(params, ex, ab);
    return static_cast<std::size_t>(std::max_element(scores.begin(), scores.end()) - scores.begin());
}

// ---------------------------------------------------------------------------
// evaluation
// ---------------------------------------------------------------------------

/// Rank of the truth under descending scores with the pessimistic tie rule:
/// the truth ranks below every candidate tied with it.
inline std::size_t truth_rank(std::span<const double> scores, std::size_t truth_index) {
    const double truth_score = scores[truth_index];
    std::size_t rank = 1;
    for (std::size_t j = 0; j < scores.size(); ++j) {
        if (j == truth_index) continue;
        if (scores[j] >= truth_score) ++rank;
    }
    return rank;
}

struct SelectionMetrics {
    double mrr = 0.0;
    std::size_t n_examples = 0;
    double mean_candidates = 0.0;
};

inline SelectionMetrics eval_mrr(std::span<const SelectionExample> dataset, const ModelParams& params,
                                 const Ablations& ab = {}) {
    if (dataset.empty()) throw std::invalid_argument("eval_mrr: empty dataset");
    SelectionMetrics m;
    double rr_sum = 0.0;
    double cand_sum = 0.0;
    for (const SelectionExample& ex : dataset) {
        const std::vector<double> scores = score_candidates(params, ex, ab);
        rr_sum += 1.0 / static_cast<double>(truth_rank(scores, ex.truth_index));
        cand_sum += static_cast<double>(ex.candidates.size());
    }
    m.n_examples = dataset.size();
    m.mrr = rr_sum / static_cast<double>(m.n_examples);
    m.mean_candidates = cand_sum / static_cast<double>(m.n_examples);
    return m;
}

// ---------------------------------------------------------------------------
// training
// ---------------------------------------------------------------------------

/// Mean absolute error against a 1-for-truth, 0-for-distractor target over
/// all candidates in the batch; one Adam step per batch.
inline std::vector<double> train_selection(ModelParams& params, AdamState& adam, Rng& shuffle_rng,
                                           std::span<const SelectionExample> train,
                                           const TrainOptions& opt) {
    if (train.empty()) throw std::invalid_argument("train_selection: empty dataset");
    std::vector<NamedParam> named = params.parameters();
    std::vector<std::size_t> order(train.size());
    std::iota(order.begin(), order.end(), 0);
    std::vector<double> epoch_losses;
    for (std::size_t epoch = 0; epoch < opt.epochs; ++epoch) {
        shuffle(shuffle_rng, order);
        double loss_sum = 0.0;
        std::size_t item_count = 0;
        for (std::size_t start = 0; start < order.size(); start += opt.batch_size) {
            const std::size_t end = std::min(order.size(), start + opt.batch_size);
            Tape tape;
            std::vector<Tensor> all_scores;
            std::vector<double> targets;
            for (std::size_t k = start; k < end; ++k) {
                const SelectionExample& ex = train[order[k]];
                std::vector<Tensor> scores = selection_forward(tape, params, ex, opt.ablations);
                for (std::size_t j = 0; j < scores.size(); ++j) {
                    all_scores.push_back(scores[j]);
                    targets.push_back(j == ex.truth_index ? 1.0 : 0.0);
                }
            }
            Tensor pred = concat(tape, all_scores);
            Tensor target = Tensor::from_vector(targets);
            Tensor loss = mae_loss(tape, pred, target);
            tape.backward(loss);
            freeze_padding_rows(params);
            adam_step(named, adam);
            loss_sum += loss.item() * static_cast<double>(targets.size());
            item_count += targets.size();
        }
        epoch_losses.push_back(loss_sum / static_cast<double>(item_count));
    }
    return epoch_losses;
}

}  // namespace deficit
