// Log ingestion, session segmentation, preprocessing filters, vocabulary,
// dataset splitting and example extraction.

#pragma once

#include <array>
#include <cctype>
#include <cstdint>
#include <istream>
#include <map>
#include <set>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "deficit/encoders.hpp"
#include "deficit/rng.hpp"

namespace deficit {

inline constexpr long long kSessionGapSeconds = 30 * 60;
inline constexpr std::size_t kDefaultMaxUrlChars = 256;

// ---------------------------------------------------------------------------
// tokenization
// ---------------------------------------------------------------------------

/// Lowercases and splits on whitespace and punctuation. '.' and '-' survive
/// inside a token ("t-shirt", "v2.0") but are trimmed at token edges; bytes
/// outside ASCII are kept as word characters.
inline std::vector<std::string> tokenize(std::string_view raw) {
    std::vector<std::string> words;
    std::string cur;
    auto flush = [&] {
        std::size_t begin = 0, end = cur.size();
        while (begin < end && (cur[begin] == '.' || cur[begin] == '-')) ++begin;
        while (end > begin && (cur[end - 1] == '.' || cur[end - 1] == '-')) --end;
        if (end > begin) words.emplace_back(cur.substr(begin, end - begin));
        cur.clear();
    };
    for (unsigned char c : raw) {
        if (c >= 0x80 || std::isalnum(c) || c == '.' || c == '-') {
            cur.push_back(static_cast<char>(std::tolower(c)));
        } else {
            flush();
        }
    }
    flush();
    return words;
}

inline std::string join_words(std::span<const std::string> words) {
    std::string out;
    for (std::size_t i = 0; i < words.size(); ++i) {
        if (i) out.push_back(' ');
        out += words[i];
    }
    return out;
}

/// A query is navigational when any '.'-separated fragment of any token is
/// an http marker.
inline bool is_navigational(std::span<const std::string> words) {
    static const std::unordered_set<std::string> markers{"www", "com", "http", "https", "net", "org"};
    for (const std::string& w : words) {
        std::size_t start = 0;
        while (start <= w.size()) {
            const std::size_t dot = w.find('.', start);
            const std::string_view frag(w.data() + start,
                                        (dot == std::string::npos ? w.size() : dot) - start);
            if (markers.count(std::string(frag))) return true;
            if (dot == std::string::npos) break;
            start = dot + 1;
        }
    }
    return false;
}

/// Per-word retention labels: 1 when the current word occurs anywhere in the
/// next query after normalization.
inline std::vector<int> label_edits(std::span<const std::string> current_words,
                                    std::span<const std::string> next_words) {
    if (next_words.empty()) throw std::invalid_argument("label_edits: empty next query");
    std::unordered_set<std::string> next_set(next_words.begin(), next_words.end());
    std::vector<int> labels;
    labels.reserve(current_words.size());
    for (const std::string& w : current_words) labels.push_back(next_set.count(w) ? 1 : 0);
    return labels;
}

// ---------------------------------------------------------------------------
// log ingestion
// ---------------------------------------------------------------------------

struct LogRecord {
    std::string user_id;
    std::string raw_query;
    long long timestamp = 0;      // seconds since epoch
    std::string clicked_url;      // empty when the row carried '-'
};

/// Parses the canonical tab-separated log: user, query, epoch seconds,
/// url or '-'. Malformed rows are rejected with their line number.
inline std::vector<LogRecord> parse_log_tsv(std::istream& in) {
    std::vector<LogRecord> records;
    std::string line;
    std::size_t line_no = 0;
    auto fail = [&](const std::string& why) {
        throw std::runtime_error("log parse error at line " + std::to_string(line_no) + ": " + why);
    };
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        std::array<std::string, 4> fields;
        std::size_t field = 0, start = 0;
        for (std::size_t i = 0; i <= line.size(); ++i) {
            if (i == line.size() || line[i] == '\t') {
                if (field >= 4) fail("more than 4 fields");
                fields[field++] = line.substr(start, i - start);
                start = i + 1;
            }
        }
        if (field != 4) fail("expected 4 tab-separated fields, got " + std::to_string(field));
        LogRecord rec;
        rec.user_id = fields[0];
        rec.raw_query = fields[1];
        std::size_t trimmed_len = rec.raw_query.size();
        std::size_t trimmed_begin = 0;
        while (trimmed_begin < trimmed_len && std::isspace(static_cast<unsigned char>(rec.raw_query[trimmed_begin]))) ++trimmed_begin;
        while (trimmed_len > trimmed_begin && std::isspace(static_cast<unsigned char>(rec.raw_query[trimmed_len - 1]))) --trimmed_len;
        if (trimmed_begin == trimmed_len) fail("empty query");
        try {
            std::size_t pos = 0;
            rec.timestamp = std::stoll(fields[2], &pos);
            if (pos != fields[2].size()) fail("bad timestamp '" + fields[2] + "'");
        } catch (const std::exception&) {
            fail("bad timestamp '" + fields[2] + "'");
        }
        if (rec.timestamp < 0) fail("negative timestamp");
        if (fields[3] != "-") rec.clicked_url = fields[3];
        records.push_back(std::move(rec));
    }
    return records;
}

inline std::string format_log_tsv(const std::vector<LogRecord>& records) {
    std::string out;
    for (const auto& r : records) {
        out += r.user_id;
        out.push_back('\t');
        out += r.raw_query;
        out.push_back('\t');
        out += std::to_string(r.timestamp);
        out.push_back('\t');
        out += r.clicked_url.empty() ? "-" : r.clicked_url;
        out.push_back('\n');
    }
    return out;
}

// ---------------------------------------------------------------------------
// sessions
// ---------------------------------------------------------------------------

struct SessionStep {
    std::vector<std::string> words;  // tokenized query; may be empty for junk queries
    std::vector<std::string> urls;   // clicked urls in click order
};

struct Session {
    std::vector<SessionStep> steps;
};

/// Groups a (user, timestamp)-sorted record stream into sessions. A new
/// session starts on user change or on a gap above `gap_seconds`; rows that
/// repeat the same (user, query, timestamp) merge their clicks into one step.
inline std::vector<Session> segment_sessions(std::span<const LogRecord> records,
                                             long long gap_seconds = kSessionGapSeconds) {
    std::vector<Session> sessions;
    for (std::size_t i = 0; i < records.size(); ++i) {
        const LogRecord& rec = records[i];
        if (i > 0) {
            const LogRecord& prev = records[i - 1];
            if (rec.user_id < prev.user_id ||
                (rec.user_id == prev.user_id && rec.timestamp < prev.timestamp))
                throw std::runtime_error("segment_sessions: records not sorted by (user, time) at row " +
                                         std::to_string(i + 1));
            const bool same_step = rec.user_id == prev.user_id && rec.raw_query == prev.raw_query &&
                                   rec.timestamp == prev.timestamp;
            if (same_step) {
                if (!rec.clicked_url.empty()) sessions.back().steps.back().urls.push_back(rec.clicked_url);
                continue;
            }
            const bool same_session =
                rec.user_id == prev.user_id && rec.timestamp - prev.timestamp <= gap_seconds;
            if (!same_session) sessions.emplace_back();
        } else {
            sessions.emplace_back();
        }
        SessionStep step;
        step.words = tokenize(rec.raw_query);
        if (!rec.clicked_url.empty()) step.urls.push_back(rec.clicked_url);
        sessions.back().steps.push_back(std::move(step));
    }
    return sessions;
}

// ---------------------------------------------------------------------------
// preprocessing filters
// ---------------------------------------------------------------------------

struct FilterTally {
    std::size_t pairs_total = 0;
    std::size_t dropped_identical = 0;
    std::size_t dropped_single_word = 0;
    std::size_t dropped_navigational = 0;
    std::size_t dropped_no_overlap = 0;
    std::size_t kept = 0;
};

/// True when the (current, next) pair survives all four rules. A failing
/// pair is attributed to the first rule it breaks, in the order: identical,
/// single word, navigational, no overlap.
inline bool pair_eligible(const SessionStep& current, const SessionStep& next, FilterTally* tally = nullptr) {
    if (tally) ++tally->pairs_total;
    if (current.words == next.words) {
        if (tally) ++tally->dropped_identical;
        return false;
    }
    if (current.words.size() < 2) {
        if (tally) ++tally->dropped_single_word;
        return false;
    }
    if (is_navigational(current.words)) {
        if (tally) ++tally->dropped_navigational;
        return false;
    }
    std::unordered_set<std::string> next_set(next.words.begin(), next.words.end());
    bool overlap = false;
    for (const std::string& w : current.words)
        if (next_set.count(w)) {
            overlap = true;
            break;
        }
    if (!overlap) {
        if (tally) ++tally->dropped_no_overlap;
        return false;
    }
    if (tally) ++tally->kept;
    return true;
}

/// Indices t such that (steps[t], steps[t+1]) is an examples-eligible pair.
inline std::vector<std::size_t> filter_queries(const Session& session, FilterTally* tally = nullptr) {
    std::vector<std::size_t> kept;
    if (session.steps.size() < 2) return kept;
    for (std::size_t t = 0; t + 1 < session.steps.size(); ++t)
        if (pair_eligible(session.steps[t], session.steps[t + 1], tally)) kept.push_back(t);
    return kept;
}

// ---------------------------------------------------------------------------
// vocabulary
// ---------------------------------------------------------------------------

class Vocabulary {
public:
    Vocabulary() {
        id_to_word_ = {"<pad>", "<oov>"};
        word_to_id_.emplace("<pad>", kPadId);
        word_to_id_.emplace("<oov>", kOovId);
    }

    Id lookup(const std::string& word) const {
        auto it = word_to_id_.find(word);
        return it == word_to_id_.end() ? kOovId : it->second;
    }

    std::vector<Id> lookup_all(std::span<const std::string> words) const {
        std::vector<Id> ids;
        ids.reserve(words.size());
        for (const auto& w : words) ids.push_back(lookup(w));
        return ids;
    }

    const std::string& word(Id id) const { return id_to_word_.at(id); }
    std::size_t size() const { return id_to_word_.size(); }

    void add(const std::string& word) {
        if (word_to_id_.count(word)) return;
        word_to_id_.emplace(word, static_cast<Id>(id_to_word_.size()));
        id_to_word_.push_back(word);
    }

    std::string serialize() const {
        std::string out;
        for (std::size_t i = 0; i < id_to_word_.size(); ++i) {
            out += id_to_word_[i];
            out.push_back('\t');
            out += std::to_string(i);
            out.push_back('\n');
        }
        return out;
    }

    static Vocabulary deserialize(std::istream& in) {
        Vocabulary v;
        std::string line;
        std::size_t idx = 0;
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            const std::size_t tab = line.find('\t');
            if (tab == std::string::npos)
                throw std::runtime_error("vocabulary parse error: missing tab");
            const std::string word = line.substr(0, tab);
            if (idx >= 2) v.add(word);
            ++idx;
        }
        return v;
    }

private:
    std::unordered_map<std::string, Id> word_to_id_;
    std::vector<std::string> id_to_word_;
};

/// Most frequent words across the given (train) sessions, ties broken toward
/// the lexicographically smaller word. `capacity` includes the two reserved
/// rows.
inline Vocabulary build_vocab(std::span<const Session> train_sessions, std::size_t capacity) {
    if (capacity < 3)
        throw std::invalid_argument("build_vocab: capacity must be >= 3 (pad, oov and at least one word)");
    std::map<std::string, std::size_t> counts;
    for (const Session& s : train_sessions)
        for (const SessionStep& step : s.steps)
            for (const std::string& w : step.words) ++counts[w];
    std::vector<std::pair<std::string, std::size_t>> ordered(counts.begin(), counts.end());
    std::sort(ordered.begin(), ordered.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) return a.second > b.second;
        return a.first < b.first;
    });
    Vocabulary v;
    for (const auto& [word, count] : ordered) {
        if (v.size() >= capacity) break;
        v.add(word);
    }
    return v;
}

// ---------------------------------------------------------------------------
// splitting
// ---------------------------------------------------------------------------

struct SplitSpec {
    double train = 0.8;
    double dev = 0.1;
    double test = 0.1;
    std::uint64_t seed = 0;
};

struct SessionSplit {
    std::vector<Session> train;
    std::vector<Session> dev;
    std::vector<Session> test;
};

/// Session-level split: seeded shuffle then contiguous slices. Queries never
/// straddle splits because whole sessions move together.
inline SessionSplit split_sessions(std::vector<Session> sessions, const SplitSpec& spec) {
    if (sessions.size() < 3)
        throw std::invalid_argument("split_sessions: need at least 3 sessions, got " +
                                    std::to_string(sessions.size()));
    if (spec.train < 0 || spec.dev < 0 || spec.test < 0 ||
        std::abs(spec.train + spec.dev + spec.test - 1.0) > 1e-9)
        throw std::invalid_argument("split_sessions: fractions must be non-negative and sum to 1");
    Rng rng(spec.seed);
    shuffle(rng, sessions);
    const std::size_t n = sessions.size();
    const std::size_t n_train = static_cast<std::size_t>(spec.train * static_cast<double>(n));
    const std::size_t n_dev = static_cast<std::size_t>(spec.dev * static_cast<double>(n));
    SessionSplit out;
    out.train.assign(sessions.begin(), sessions.begin() + n_train);
    out.dev.assign(sessions.begin() + n_train, sessions.begin() + n_train + n_dev);
    out.test.assign(sessions.begin() + n_train + n_dev, sessions.end());
    return out;
}

// ---------------------------------------------------------------------------
// example extraction
// ---------------------------------------------------------------------------

struct RetentionExample {
    std::vector<Id> current_ids;
    std::vector<std::string> words;      // original (normalized) strings
    std::vector<StepInput> past;         // most recent first, at most P steps
    std::vector<int> labels;             // 1 = retention
};

/// Selection-task unit before candidate generation.
struct SelectionScaffold {
    std::vector<Id> current_ids;
    std::string current_norm;            // normalized query string
    std::string truth_norm;              // normalized next query
    std::vector<StepInput> past;
};

struct ExampleSet {
    std::vector<RetentionExample> retention;
    std::vector<SelectionScaffold> selection;
    FilterTally tally;
};

/// Builds the up-to-P past window (most recent first) for the step at
/// `current`; steps whose query tokenized to nothing are skipped.
inline std::vector<StepInput> past_window(const Session& session, std::size_t current,
                                          const Vocabulary& vocab, std::size_t context_window,
                                          std::size_t max_url_chars) {
    std::vector<StepInput> past;
    for (std::size_t back = 1; back <= current && past.size() < context_window; ++back) {
        const SessionStep& step = session.steps[current - back];
        if (step.words.empty()) continue;
        StepInput in;
        in.query_ids = vocab.lookup_all(step.words);
        in.url_chars = url_char_ids(step.urls, max_url_chars);
        past.push_back(std::move(in));
    }
    return past;
}

/// One example per eligible (current, next) pair that has at least one
/// usable past step.
inline ExampleSet make_examples(std::span<const Session> sessions, const Vocabulary& vocab,
                                std::size_t context_window,
                                std::size_t max_url_chars = kDefaultMaxUrlChars) {
    ExampleSet out;
    for (const Session& session : sessions) {
        const std::vector<std::size_t> eligible = filter_queries(session, &out.tally);
        for (std::size_t t : eligible) {
            if (t == 0) continue;  // needs at least one past step
            std::vector<StepInput> past = past_window(session, t, vocab, context_window, max_url_chars);
            if (past.empty()) continue;
            const SessionStep& current = session.steps[t];
            const SessionStep& next = session.steps[t + 1];

            RetentionExample ex;
            ex.current_ids = vocab.lookup_all(current.words);
            ex.words = current.words;
            ex.labels = label_edits(current.words, next.words);
            ex.past = past;
            out.retention.push_back(ex);

            SelectionScaffold sc;
            sc.current_ids = ex.current_ids;
            sc.current_norm = join_words(current.words);
            sc.truth_norm = join_words(next.words);
            sc.past = std::move(past);
            out.selection.push_back(std::move(sc));
        }
    }
    return out;
}

}  // namespace deficit
