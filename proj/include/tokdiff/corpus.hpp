#pragma once

#include <string>
#include <utility>
#include <vector>

#include "tokdiff/ctp.hpp"
#include "tokdiff/rng.hpp"
#include "tokdiff/tokens.hpp"

namespace tokdiff {

// One synthetic accent: which native tokens are replaced by which marker,
// plus the per-run and per-gap corruption rates. All rates are scaled by
// strength, so strength 0 is the identity transform.
struct AccentSpec {
    int id = 0;
    std::vector<std::pair<int, int>> substitutions;  // native token -> marker
    std::vector<int> fillers;                        // tokens insertable between runs
    double sub_rate = 0.6;       // per run whose token has a marker
    double lengthen_rate = 0.4;  // per run; appends copies of the run's token
    double insert_rate = 0.15;   // per gap (before, between, after runs)
    int max_extra = 1;           // appended copies drawn from {1..max_extra}
    double strength = 1.0;       // in [0,1]

    // Marker for a native token, or -1 when the spec leaves it alone.
    int sub_for(int token) const;
};

struct CorpusParams {
    int vocab = 64;     // content token ids 0..vocab-1
    int alphabet = 16;  // latent symbols 0..alphabet-1; natives use these ids
    int latent_min = 10;
    int latent_max = 40;

    void validate() const;
};

// Copies a latent symbol expands to. Varies by symbol so run length alone
// identifies how many extra tokens an accent appended.
int rep_count(int symbol);

struct NativeSample {
    TokenSeq tokens;
    std::vector<int> latents;
};

// Native side: latent symbols without adjacent repeats (keeps every latent
// sequence alignable to its tokens), each expanded to rep_count copies.
NativeSample gen_native(const CorpusParams& p, Rng& rng);

struct AccentResult {
    TokenSeq source;
    std::vector<int> provenance;  // source positions the transform touched
};

// Walks the native run structure left to right: each gap may gain one filler,
// each run with a marker may be substituted wholesale, each run may be
// lengthened by appending copies of its (possibly substituted) token at the
// end. Substitution keeps run length, so every edit is countable afterwards.
AccentResult apply_accent(const TokenSeq& native, const AccentSpec& spec,
                          Rng& rng);

// Ground-truth common labels for a generated pair.
CtpLabels annotate(const TokenSeq& source, const TokenSeq& native);

// Transformed positions the labeling nevertheless marked common. Nonzero is
// possible (subsequence matching may coincidentally align an appended copy)
// and is reported rather than treated as an error.
int provenance_conflicts(const CtpLabels& labels,
                         const std::vector<int>& provenance);

// Throws unless markers and fillers are content ids disjoint from native
// tokens and from each other, rates are sane, and strength is in [0,1].
void validate_spec(const AccentSpec& spec, const CorpusParams& p);

// Four accents over marker ids 2*alphabet+s and filler ids above them.
// Marker assignment is shared across specs (native s always maps to the same
// marker), so run lengths stay decodable corpus-wide.
std::vector<AccentSpec> default_specs(const CorpusParams& p);

// n pairs; sample i draws from root.child("sample", i), so generation order
// and worker count never change the output.
std::vector<PairedSample> gen_corpus(const CorpusParams& p,
                                     const std::vector<AccentSpec>& specs,
                                     int n, const Rng& root);

// Split keyed on the latent sequence: the same latents always land on the
// same side, so no sequence leaks between train and eval.
bool eval_split(const std::vector<int>& latents, int eval_percent);

// Spec files are a JSON array of objects; unknown keys rejected.
std::vector<AccentSpec> specs_from_json(const std::string& text);
std::string specs_to_json(const std::vector<AccentSpec>& specs);
std::vector<AccentSpec> read_specs(const std::string& path);
void write_specs(const std::vector<AccentSpec>& specs, const std::string& path);

}  // namespace tokdiff
