// Representation building: word/character embeddings, the bidirectional
// query encoder, the character-level result encoder, the past-query sequence
// encoder and the information-deficit computation.

#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "deficit/gru.hpp"
#include "deficit/tensor.hpp"

namespace deficit {

using Id = std::uint32_t;

inline constexpr Id kPadId = 0;  // row frozen at zero
inline constexpr Id kOovId = 1;

// Character ids: bytes 0..127 map to 2+byte, everything else to the OOV row.
inline constexpr std::size_t kCharVocabSize = 130;
inline constexpr unsigned char kUrlSeparator = 0x1f;  // joins clicked urls

inline Id char_id(unsigned char byte) {
    return byte < 128 ? static_cast<Id>(2 + byte) : kOovId;
}

struct EmbeddingTable {
    Tensor word_table;  // (vocab_size x embed_dim)
    Tensor char_table;  // (kCharVocabSize x char_embed_dim)

    static EmbeddingTable init(std::size_t vocab_size, std::size_t embed_dim, std::size_t char_embed_dim,
                               Rng& rng) {
        if (vocab_size < 2) throw std::invalid_argument("EmbeddingTable: vocab must hold pad and oov rows");
        EmbeddingTable e;
        e.word_table = Tensor(Shape{vocab_size, embed_dim}, true);
        e.char_table = Tensor(Shape{kCharVocabSize, char_embed_dim}, true);
        auto fill = [&](Tensor& t, std::size_t cols) {
            // Row 0 is the padding row and stays zero.
            for (std::size_t i = cols; i < t.size(); ++i) t[i] = rand_range(rng, -kInitRange, kInitRange);
        };
        fill(e.word_table, embed_dim);
        fill(e.char_table, char_embed_dim);
        return e;
    }
};

/// One (query, clicked results) step as the model consumes it.
struct StepInput {
    std::vector<Id> query_ids;
    std::vector<Id> url_chars;  // joined and truncated click characters, may be empty
};

struct EncodedQuery {
    Tensor z;                            // h_n^f ⊗ h_1^b
    std::vector<Tensor> forward_states;  // h_1^f .. h_n^f
    std::vector<Tensor> backward_states; // h_n^b .. h_1^b, in computation order
};

/// Bidirectional encoding of a word-id sequence. The forward pass reads
/// w_1..w_n, the backward pass w_n..w_1; the query representation is the
/// elementwise product of the two final states.
inline EncodedQuery encode_query(Tape& tape, std::span<const Id> word_ids, const Tensor& word_table,
                                 const GruParams& fwd, const GruParams& bwd) {
    if (word_ids.empty()) throw std::invalid_argument("encode_query: empty query");
    std::vector<Tensor> embedded;
    embedded.reserve(word_ids.size());
    for (Id id : word_ids) embedded.push_back(lookup_row(tape, word_table, id));

    EncodedQuery enc;
    Tensor h0(Shape{fwd.hidden_dim});
    enc.forward_states = gru_forward(tape, fwd, embedded, h0);
    std::vector<Tensor> reversed(embedded.rbegin(), embedded.rend());
    enc.backward_states = gru_forward(tape, bwd, reversed, h0);
    enc.z = mul(tape, enc.forward_states.back(), enc.backward_states.back());
    return enc;
}

/// Builds the character sequence for a step's clicked urls: urls joined in
/// click order by the reserved separator, truncated to `max_url_chars`
/// keeping the earliest characters.
inline std::vector<Id> url_char_ids(const std::vector<std::string>& clicked_urls,
                                    std::size_t max_url_chars) {
    std::vector<Id> out;
    for (std::size_t u = 0; u < clicked_urls.size(); ++u) {
        if (u) out.push_back(char_id(kUrlSeparator));
        for (unsigned char c : clicked_urls[u]) out.push_back(char_id(c));
    }
    if (out.size() > max_url_chars) out.resize(max_url_chars);
    return out;
}

/// Character-level result encoding: the last hidden state of the url GRU,
/// or the zero vector when the step had no clicks.
inline Tensor encode_result(Tape& tape, std::span<const Id> url_chars, const Tensor& char_table,
                            const GruParams& url_gru) {
    if (url_chars.empty()) return Tensor(Shape{url_gru.hidden_dim});
    std::vector<Tensor> embedded;
    embedded.reserve(url_chars.size());
    for (Id id : url_chars) embedded.push_back(lookup_row(tape, char_table, id));
    Tensor h0(Shape{url_gru.hidden_dim});
    return gru_forward(tape, url_gru, embedded, h0).back();
}

/// D_{-j} = z_{-j} ⊖ u_{-j}.
inline Tensor info_deficit(Tape& tape, const Tensor& z_past, const Tensor& u_past) {
    return sub(tape, z_past, u_past);
}

/// Elementwise sum of per-step deficits; an empty list is the zero vector.
inline Tensor aggregate_deficit(Tape& tape, const std::vector<Tensor>& per_step, std::size_t hidden_dim) {
    if (per_step.empty()) return Tensor(Shape{hidden_dim});
    Tensor total = per_step.front();
    for (std::size_t j = 1; j < per_step.size(); ++j) total = add(tape, total, per_step[j]);
    return total;
}

/// Runs the sequence GRU over the past-query representations in the order
/// given and returns its final state; an empty history is the zero vector.
inline Tensor encode_context(Tape& tape, const std::vector<Tensor>& past_z, const GruParams& seq_gru) {
    if (past_z.empty()) return Tensor(Shape{seq_gru.hidden_dim});
    Tensor h0(Shape{seq_gru.hidden_dim});
    return gru_forward(tape, seq_gru, past_z, h0).back();
}

}  // namespace deficit
