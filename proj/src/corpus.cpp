#include "tokdiff/corpus.hpp"

#include <fstream>
#include <sstream>

#include <json.hpp>

namespace tokdiff {

int AccentSpec::sub_for(int token) const {
    for (const auto& [from, to] : substitutions)
        if (from == token) return to;
    return -1;
}

void CorpusParams::validate() const {
    if (alphabet < 2) throw Error("corpus: alphabet must be >= 2");
    if (vocab < alphabet) throw Error("corpus: vocab smaller than alphabet");
    if (latent_min < 1 || latent_max < latent_min)
        throw Error("corpus: bad latent length bounds");
}

int rep_count(int symbol) { return 1 + (symbol % 3); }

NativeSample gen_native(const CorpusParams& p, Rng& rng) {
    int len = rng.range(p.latent_min, p.latent_max);
    NativeSample out;
    out.latents.reserve(len);
    int prev = -1;
    for (int i = 0; i < len; ++i) {
        int s;
        if (prev < 0) {
            s = static_cast<int>(rng.below(p.alphabet));
        } else {
            s = static_cast<int>(rng.below(p.alphabet - 1));
            if (s >= prev) ++s;  // skip prev: no adjacent repeated symbols
        }
        out.latents.push_back(s);
        prev = s;
        out.tokens.insert(out.tokens.end(), rep_count(s), s);
    }
    return out;
}

AccentResult apply_accent(const TokenSeq& native, const AccentSpec& spec,
                          Rng& rng) {
    AccentResult out;
    out.source.reserve(native.size() + native.size() / 2);
    double k = spec.strength;
    auto maybe_insert = [&] {
        if (spec.fillers.empty()) return;
        if (!(rng.uniform() < spec.insert_rate * k)) return;
        int f = spec.fillers[rng.below(spec.fillers.size())];
        out.provenance.push_back(static_cast<int>(out.source.size()));
        out.source.push_back(f);
    };
    size_t i = 0;
    while (i < native.size()) {
        size_t j = i;
        while (j < native.size() && native[j] == native[i]) ++j;
        maybe_insert();
        int run = static_cast<int>(j - i);
        int emit = native[i];
        bool subbed = false;
        int marker = spec.sub_for(emit);
        if (marker >= 0 && rng.uniform() < spec.sub_rate * k) {
            emit = marker;
            subbed = true;
        }
        int extra = 0;
        if (rng.uniform() < spec.lengthen_rate * k)
            extra = spec.max_extra <= 1 ? 1 : rng.range(1, spec.max_extra);
        for (int c = 0; c < run + extra; ++c) {
            if (subbed || c >= run)
                out.provenance.push_back(static_cast<int>(out.source.size()));
            out.source.push_back(emit);
        }
        i = j;
    }
    maybe_insert();
    return out;
}

CtpLabels annotate(const TokenSeq& source, const TokenSeq& native) {
    return lcs_labels(source, native);
}

int provenance_conflicts(const CtpLabels& labels,
                         const std::vector<int>& provenance) {
    int n = 0;
    for (int pos : provenance) {
        if (pos < 0 || pos >= static_cast<int>(labels.size()))
            throw Error("corpus: provenance position out of range");
        if (labels[pos] == 1) ++n;
    }
    return n;
}

void validate_spec(const AccentSpec& spec, const CorpusParams& p) {
    auto bad = [&](const std::string& why) {
        throw Error("accent spec " + std::to_string(spec.id) + ": " + why);
    };
    if (spec.strength < 0.0 || spec.strength > 1.0) bad("strength outside [0,1]");
    for (double r : {spec.sub_rate, spec.lengthen_rate, spec.insert_rate})
        if (r < 0.0 || r > 1.0) bad("rate outside [0,1]");
    if (spec.max_extra < 1) bad("max_extra must be >= 1");
    std::vector<int> images;
    for (const auto& [from, to] : spec.substitutions) {
        if (from < 0 || from >= p.alphabet) bad("substituted token is not native");
        if (to < p.alphabet || to >= p.vocab) bad("marker collides with native ids");
        for (const auto& [f2, t2] : spec.substitutions)
            if (&f2 != &from && f2 == from) bad("duplicate substitution key");
        for (int img : images)
            if (img == to) bad("marker used twice");
        images.push_back(to);
    }
    for (int f : spec.fillers) {
        if (f < p.alphabet || f >= p.vocab) bad("filler collides with native ids");
        for (int img : images)
            if (img == f) bad("filler collides with a marker");
    }
}

std::vector<AccentSpec> default_specs(const CorpusParams& p) {
    int mk = 2 * p.alphabet;      // marker for native s is mk+s, all specs
    int fb = 2 * p.alphabet + 8;  // fillers above the marker block
    if (fb + 7 >= p.vocab)
        throw Error("corpus: vocab too small for the default accent specs");
    auto subs = [&](std::initializer_list<int> keys) {
        std::vector<std::pair<int, int>> m;
        for (int s : keys) m.emplace_back(s, mk + s);
        return m;
    };
    std::vector<AccentSpec> specs(4);
    specs[0] = {0, subs({0, 1, 2, 3, 4, 5, 6, 7}), {fb, fb + 1},
                0.6, 0.4, 0.15, 1, 1.0};
    specs[1] = {1, subs({0, 1, 2, 3}), {fb + 2, fb + 3},
                0.8, 0.2, 0.10, 1, 1.0};
    specs[2] = {2, subs({4, 5, 6, 7}), {fb + 4},
                0.4, 0.7, 0.05, 2, 1.0};
    specs[3] = {3, subs({0, 2, 4, 6}), {fb + 5, fb + 6},
                0.5, 0.3, 0.20, 1, 0.6};
    return specs;
}

std::vector<PairedSample> gen_corpus(const CorpusParams& p,
                                     const std::vector<AccentSpec>& specs,
                                     int n, const Rng& root) {
    p.validate();
    if (n < 0) throw Error("corpus: negative sample count");
    if (specs.empty()) throw Error("corpus: need at least one accent spec");
    for (const AccentSpec& s : specs) validate_spec(s, p);
    std::vector<PairedSample> out;
    out.reserve(n);
    for (int i = 0; i < n; ++i) {
        Rng sr = root.child("sample", static_cast<uint64_t>(i));
        NativeSample nat = gen_native(p, sr);
        const AccentSpec& spec = specs[sr.below(specs.size())];
        AccentResult acc = apply_accent(nat.tokens, spec, sr);
        PairedSample ps;
        ps.source = std::move(acc.source);
        ps.target = std::move(nat.tokens);
        ps.latent_labels = std::move(nat.latents);
        ps.common_labels = annotate(ps.source, ps.target);
        ps.spec_id = spec.id;
        ps.provenance = std::move(acc.provenance);
        out.push_back(std::move(ps));
    }
    return out;
}

bool eval_split(const std::vector<int>& latents, int eval_percent) {
    uint64_t h = 0xcbf29ce484222325ull;  // FNV-1a over the latent bytes
    for (int s : latents) {
        uint32_t u = static_cast<uint32_t>(s);
        for (int b = 0; b < 4; ++b) {
            h ^= (u >> (8 * b)) & 0xffu;
            h *= 0x100000001b3ull;
        }
    }
    return static_cast<int>(h % 100) < eval_percent;
}

namespace {

nlohmann::json spec_to_json(const AccentSpec& s) {
    nlohmann::json subs = nlohmann::json::array();
    for (const auto& [from, to] : s.substitutions)
        subs.push_back({from, to});
    return {{"id", s.id},
            {"substitutions", subs},
            {"fillers", s.fillers},
            {"sub_rate", s.sub_rate},
            {"lengthen_rate", s.lengthen_rate},
            {"insert_rate", s.insert_rate},
            {"max_extra", s.max_extra},
            {"strength", s.strength}};
}

AccentSpec spec_from_json(const nlohmann::json& j) {
    static const char* known[] = {"id",          "substitutions", "fillers",
                                  "sub_rate",    "lengthen_rate", "insert_rate",
                                  "max_extra",   "strength"};
    for (auto it = j.begin(); it != j.end(); ++it) {
        bool ok = false;
        for (const char* k : known) ok = ok || it.key() == k;
        if (!ok) throw Error("accent spec: unknown key \"" + it.key() + "\"");
    }
    AccentSpec s;
    try {
        if (j.contains("id")) s.id = j["id"].get<int>();
        if (j.contains("substitutions"))
            for (const auto& pr : j["substitutions"]) {
                if (!pr.is_array() || pr.size() != 2)
                    throw Error("accent spec: substitution must be [from, to]");
                s.substitutions.emplace_back(pr[0].get<int>(), pr[1].get<int>());
            }
        if (j.contains("fillers"))
            s.fillers = j["fillers"].get<std::vector<int>>();
        if (j.contains("sub_rate")) s.sub_rate = j["sub_rate"].get<double>();
        if (j.contains("lengthen_rate"))
            s.lengthen_rate = j["lengthen_rate"].get<double>();
        if (j.contains("insert_rate"))
            s.insert_rate = j["insert_rate"].get<double>();
        if (j.contains("max_extra")) s.max_extra = j["max_extra"].get<int>();
        if (j.contains("strength")) s.strength = j["strength"].get<double>();
    } catch (const nlohmann::json::exception& e) {
        throw Error(std::string("accent spec: ") + e.what());
    }
    return s;
}

}  // namespace

std::vector<AccentSpec> specs_from_json(const std::string& text) {
    nlohmann::json j = nlohmann::json::parse(text, nullptr, false);
    if (j.is_discarded() || !j.is_array())
        throw Error("accent specs: expected a JSON array");
    std::vector<AccentSpec> out;
    for (const auto& e : j) out.push_back(spec_from_json(e));
    return out;
}

std::string specs_to_json(const std::vector<AccentSpec>& specs) {
    nlohmann::json j = nlohmann::json::array();
    for (const AccentSpec& s : specs) j.push_back(spec_to_json(s));
    return j.dump(2) + "\n";
}

std::vector<AccentSpec> read_specs(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error("accent specs: cannot open " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return specs_from_json(ss.str());
}

void write_specs(const std::vector<AccentSpec>& specs, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("accent specs: cannot open " + path + " for writing");
    out << specs_to_json(specs);
    if (!out) throw Error("accent specs: write failed for " + path);
}

}  // namespace tokdiff
