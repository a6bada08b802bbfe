#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace tokdiff {

// Error type for everything user-facing (I/O, validation, domain errors).
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Content ids are 0..size-1; [MASK] and the three structural specials sit in
// a contiguous block above them so one embedding table covers everything.
struct Vocab {
    int size = 0;

    explicit Vocab(int v) : size(v) {
        if (v < 2) throw Error("vocab: size must be >= 2");
    }
    int mask_id() const { return size; }
    int start_id() const { return size + 1; }
    int task_id() const { return size + 2; }
    int end_id() const { return size + 3; }
    int total_ids() const { return size + 4; }

    bool is_content(int id) const { return id >= 0 && id < size; }
    bool valid_seq_id(int id) const { return is_content(id) || id == mask_id(); }
};

using TokenSeq = std::vector<int>;

// Throws unless every id is a content id or (when allow_mask) the mask id.
void validate_seq(const TokenSeq& seq, const Vocab& vocab,
                  bool allow_mask = false, const char* what = "sequence");

bool has_mask(const TokenSeq& seq, const Vocab& vocab);

struct PairedSample {
    TokenSeq source;               // possibly accented side
    TokenSeq target;               // native side
    std::vector<int> common_labels;  // one 0/1 per source position
    std::vector<int> latent_labels;  // canonical symbol sequence (CTC targets)
    int spec_id = -1;                // accent spec that produced the pair, -1 if n/a
    std::vector<int> provenance;     // source positions touched by the transform

    double ratio() const {
        return static_cast<double>(target.size()) / static_cast<double>(source.size());
    }
};

// JSONL corpus: one object per line with keys "src","tgt","labels","latents"
// (plus optional "spec" and "prov" written by the generator).
std::vector<PairedSample> read_corpus(const std::string& path, const Vocab& vocab);
void write_corpus(const std::vector<PairedSample>& samples, const std::string& path);

}  // namespace tokdiff
