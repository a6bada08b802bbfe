#include "tokdiff/tokens.hpp"

#include <fstream>
#include <sstream>

#include <json.hpp>

namespace tokdiff {

void validate_seq(const TokenSeq& seq, const Vocab& vocab, bool allow_mask,
                  const char* what) {
    for (int id : seq) {
        bool ok = allow_mask ? vocab.valid_seq_id(id) : vocab.is_content(id);
        if (!ok)
            throw Error(std::string(what) + ": token id " + std::to_string(id) +
                        " out of range for vocab size " + std::to_string(vocab.size));
    }
}

bool has_mask(const TokenSeq& seq, const Vocab& vocab) {
    for (int id : seq)
        if (id == vocab.mask_id()) return true;
    return false;
}

namespace {

std::vector<int> int_array(const nlohmann::json& j, const char* key, int line) {
    auto it = j.find(key);
    if (it == j.end() || !it->is_array())
        throw Error("corpus line " + std::to_string(line) + ": missing array \"" +
                    key + "\"");
    std::vector<int> out;
    out.reserve(it->size());
    for (const auto& e : *it) {
        if (!e.is_number_integer())
            throw Error("corpus line " + std::to_string(line) + ": \"" + key +
                        "\" holds a non-integer");
        out.push_back(e.get<int>());
    }
    return out;
}

void append_ints(std::string& out, const std::vector<int>& xs) {
    out += '[';
    for (size_t i = 0; i < xs.size(); ++i) {
        if (i) out += ',';
        out += std::to_string(xs[i]);
    }
    out += ']';
}

}  // namespace

std::vector<PairedSample> read_corpus(const std::string& path, const Vocab& vocab) {
    std::ifstream in(path);
    if (!in) throw Error("corpus: cannot open " + path);
    std::vector<PairedSample> samples;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
        if (j.is_discarded())
            throw Error("corpus line " + std::to_string(lineno) + ": malformed JSON");
        PairedSample s;
        s.source = int_array(j, "src", lineno);
        s.target = int_array(j, "tgt", lineno);
        if (j.contains("labels")) s.common_labels = int_array(j, "labels", lineno);
        if (j.contains("latents")) s.latent_labels = int_array(j, "latents", lineno);
        if (j.contains("spec")) s.spec_id = j["spec"].get<int>();
        if (j.contains("prov")) s.provenance = int_array(j, "prov", lineno);
        if (s.source.empty() || s.target.empty())
            throw Error("corpus line " + std::to_string(lineno) + ": empty sequence");
        if (!s.common_labels.empty() && s.common_labels.size() != s.source.size())
            throw Error("corpus line " + std::to_string(lineno) +
                        ": labels length != src length");
        validate_seq(s.source, vocab, false, "src");
        validate_seq(s.target, vocab, false, "tgt");
        for (int b : s.common_labels)
            if (b != 0 && b != 1)
                throw Error("corpus line " + std::to_string(lineno) +
                            ": labels must be 0/1");
        samples.push_back(std::move(s));
    }
    return samples;
}

void write_corpus(const std::vector<PairedSample>& samples, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("corpus: cannot open " + path + " for writing");
    std::string buf;
    for (const PairedSample& s : samples) {
        buf.clear();
        buf += "{\"src\":";
        append_ints(buf, s.source);
        buf += ",\"tgt\":";
        append_ints(buf, s.target);
        buf += ",\"labels\":";
        append_ints(buf, s.common_labels);
        buf += ",\"latents\":";
        append_ints(buf, s.latent_labels);
        if (s.spec_id >= 0) {
            buf += ",\"spec\":" + std::to_string(s.spec_id);
            buf += ",\"prov\":";
            append_ints(buf, s.provenance);
        }
        buf += "}\n";
        out << buf;
    }
    if (!out) throw Error("corpus: write failed for " + path);
}

}  // namespace tokdiff
