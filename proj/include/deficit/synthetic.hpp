// Synthetic session generator with a known generative law, used to verify
// that the model recovers the click-coverage signal.
//
// Each session hides a small "need" word set. Queries ask for need words
// plus fresh noise; a step's clicked result may cover the asked need words
// (an "a."-prefixed url listing them), after which the user reformulates
// away from them. The user reacts with a one-step delay: the retention
// decision between q_t and q_{t+1} reads the coverage state as of the end of
// step t-1, which is exactly the most recent (query, clicks) pair a model
// sees. Retention probabilities:
//
//   need word, not yet covered:  0.5 + 0.45 * deficit_strength
//   need word, covered:          0.5 - 0.45 * deficit_strength
//   noise word:                  0.10
//
// Next-query padding never reuses current-query words, so the sampled
// probability of each current word is its exact membership probability in
// the next query.

#pragma once

#include <algorithm>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "deficit/data.hpp"
#include "deficit/rng.hpp"

namespace deficit {

struct SyntheticConfig {
    std::size_t n_sessions = 1000;
    std::size_t vocab_size = 25;   // shared need/noise word pool
    std::uint64_t seed = 1;
    double deficit_strength = 1.0; // in [0, 1]
};

namespace synth {

inline constexpr std::size_t kNeedWords = 3;
inline constexpr std::size_t kMinSteps = 4;
inline constexpr std::size_t kMaxSteps = 6;
inline constexpr std::size_t kMinQueryLen = 4;
inline constexpr std::size_t kMaxQueryLen = 5;
inline constexpr double kNoiseRetention = 0.10;
inline constexpr double kCoverChance = 0.45;     // per step while uncovered
inline constexpr double kReaskChance = 0.55;     // dropped need words, while unnoticed
inline constexpr double kDistractorChance = 0.6; // click on a non-answer url
inline constexpr double kSplitUrlChance = 0.4;   // answer spread over two clicks

}  // namespace synth

struct SyntheticStep {
    std::vector<std::string> words;
    std::vector<std::string> urls;
    std::vector<bool> is_need;          // per word
    std::vector<double> retention_p;    // per word; empty for the last step
    bool covered_at_decision = false;   // coverage state the retention draw used
};

struct SyntheticSession {
    std::vector<SyntheticStep> steps;
    std::vector<std::string> need_words;
};

inline std::vector<SyntheticSession> gen_synthetic_sessions(const SyntheticConfig& cfg) {
    if (cfg.vocab_size < synth::kNeedWords + synth::kMaxQueryLen + 2)
        throw std::invalid_argument("gen_synthetic: vocab_size too small for the query length");
    if (cfg.deficit_strength < 0.0 || cfg.deficit_strength > 1.0)
        throw std::invalid_argument("gen_synthetic: deficit_strength must be in [0, 1]");
    Rng rng(cfg.seed);
    const double p_uncovered = 0.5 + 0.45 * cfg.deficit_strength;
    const double p_covered = 0.5 - 0.45 * cfg.deficit_strength;

    auto word = [](std::size_t i) { return "w" + std::to_string(i); };

    std::vector<SyntheticSession> sessions;
    sessions.reserve(cfg.n_sessions);
    for (std::size_t s = 0; s < cfg.n_sessions; ++s) {
        SyntheticSession session;
        std::set<std::string> need;
        while (need.size() < synth::kNeedWords) need.insert(word(rand_index(rng, cfg.vocab_size)));
        session.need_words.assign(need.begin(), need.end());

        auto fresh_noise = [&](const std::vector<std::string>& exclude) {
            while (true) {
                std::string w = word(rand_index(rng, cfg.vocab_size));
                if (need.count(w)) continue;
                if (std::find(exclude.begin(), exclude.end(), w) != exclude.end()) continue;
                return w;
            }
        };

        const std::size_t n_steps = synth::kMinSteps + rand_index(rng, synth::kMaxSteps - synth::kMinSteps + 1);
        bool covered = false;

        // queries use a canonical word order, which makes repeats across
        // sessions common enough for the co-occurrence index to be useful
        std::vector<std::string> query(session.need_words);
        {
            const std::size_t target = synth::kMinQueryLen +
                                       rand_index(rng, synth::kMaxQueryLen - synth::kMinQueryLen + 1);
            while (query.size() < target) query.push_back(fresh_noise(query));
            std::sort(query.begin(), query.end());
        }

        for (std::size_t t = 0; t < n_steps; ++t) {
            const bool noticed = covered;  // state before this step's clicks

            SyntheticStep step;
            step.words = query;
            for (const auto& w : query) step.is_need.push_back(need.count(w) != 0);

            // clicks for this step
            if (!covered && rand_bernoulli(rng, synth::kCoverChance)) {
                std::vector<std::string> asked;
                for (const auto& w : query)
                    if (need.count(w)) asked.push_back(w);
                if (!asked.empty()) {
                    covered = true;
                    if (asked.size() >= 2 && rand_bernoulli(rng, synth::kSplitUrlChance)) {
                        step.urls.push_back("a." + asked.front());
                        std::string rest;
                        for (std::size_t i = 1; i < asked.size(); ++i) {
                            if (i > 1) rest.push_back('.');
                            rest += asked[i];
                        }
                        step.urls.push_back("a." + rest);
                    } else {
                        std::string joined;
                        for (std::size_t i = 0; i < asked.size(); ++i) {
                            if (i) joined.push_back('.');
                            joined += asked[i];
                        }
                        step.urls.push_back("a." + joined);
                    }
                }
            }
            if (step.urls.empty() && rand_bernoulli(rng, synth::kDistractorChance))
                step.urls.push_back("r." + fresh_noise(query));

            // next query, composed from the delayed coverage state
            if (t + 1 < n_steps) {
                step.covered_at_decision = noticed;
                std::vector<std::string> next;
                for (const auto& w : query) {
                    const bool is_need = need.count(w) != 0;
                    const double p = is_need ? (noticed ? p_covered : p_uncovered) : synth::kNoiseRetention;
                    step.retention_p.push_back(p);
                    if (rand_bernoulli(rng, p)) next.push_back(w);
                }
                if (!noticed) {
                    for (const auto& w : session.need_words) {
                        if (std::find(query.begin(), query.end(), w) != query.end()) continue;
                        if (rand_bernoulli(rng, synth::kReaskChance)) next.push_back(w);
                    }
                }
                const std::size_t target = synth::kMinQueryLen +
                                           rand_index(rng, synth::kMaxQueryLen - synth::kMinQueryLen + 1);
                while (next.size() < target) {
                    std::vector<std::string> exclude = next;
                    exclude.insert(exclude.end(), query.begin(), query.end());
                    next.push_back(fresh_noise(exclude));
                }
                std::sort(next.begin(), next.end());
                session.steps.push_back(std::move(step));
                query = std::move(next);
            } else {
                session.steps.push_back(std::move(step));
            }
        }
        sessions.push_back(std::move(session));
    }
    return sessions;
}

/// Canonical log rows for a generated corpus: one user per session, steps a
/// minute apart, one row per click ('-' rows for clickless steps). Row order
/// is already (user, timestamp)-sorted.
inline std::vector<LogRecord> gen_synthetic(const SyntheticConfig& cfg) {
    const std::vector<SyntheticSession> sessions = gen_synthetic_sessions(cfg);
    std::vector<LogRecord> records;
    char user[16];
    for (std::size_t s = 0; s < sessions.size(); ++s) {
        std::snprintf(user, sizeof user, "u%06zu", s);
        const long long base = 1'000'000'000LL + static_cast<long long>(s) * 86400LL;
        for (std::size_t t = 0; t < sessions[s].steps.size(); ++t) {
            const SyntheticStep& step = sessions[s].steps[t];
            LogRecord rec;
            rec.user_id = user;
            rec.raw_query = join_words(step.words);
            rec.timestamp = base + static_cast<long long>(t) * 60;
            if (step.urls.empty()) {
                records.push_back(rec);
            } else {
                for (const auto& url : step.urls) {
                    rec.clicked_url = url;
                    records.push_back(rec);
                }
            }
        }
    }
    return records;
}

/// Law optimum for per-word prediction: the mean over examples-eligible
/// pairs of the per-query mean of max(p, 1-p), p being the true sampled
/// retention probability of each word. Regenerates the corpus from the same
/// config, so it is exact for the corpus a given seed produces.
inline double synthetic_bayes_ceiling(const SyntheticConfig& cfg) {
    const std::vector<SyntheticSession> sessions = gen_synthetic_sessions(cfg);
    double acc_sum = 0.0;
    std::size_t n_queries = 0;
    for (const SyntheticSession& session : sessions) {
        for (std::size_t t = 1; t + 1 < session.steps.size(); ++t) {
            const SyntheticStep& cur = session.steps[t];
            const SyntheticStep& nxt = session.steps[t + 1];
            SessionStep a{cur.words, {}}, b{nxt.words, {}};
            if (!pair_eligible(a, b)) continue;
            double q_acc = 0.0;
            for (double p : cur.retention_p) q_acc += std::max(p, 1.0 - p);
            acc_sum += q_acc / static_cast<double>(cur.retention_p.size());
            ++n_queries;
        }
    }
    if (n_queries == 0) throw std::runtime_error("synthetic_bayes_ceiling: no eligible pairs");
    return acc_sum / static_cast<double>(n_queries);
}

}  // namespace deficit
