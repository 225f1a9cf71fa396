#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>

#include <json.hpp>

#include "lll/model.hpp"
#include "lll/taskdata.hpp"

namespace lll {

// Checkpoint layout: one line of compact JSON (config, vocabulary, parameter
// names and shapes in order), then the flat little-endian float64 parameter
// data in manifest order.

namespace detail {

inline uint64_t to_le_bits(double v) {
    uint64_t bits;
    std::memcpy(&bits, &v, sizeof bits);
    if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap64(bits);
    return bits;
}

inline double from_le_bits(uint64_t bits) {
    if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap64(bits);
    double v;
    std::memcpy(&v, &bits, sizeof v);
    return v;
}

}  // namespace detail

struct Checkpoint {
    LanguageModel model;
    Vocabulary vocab;
};

inline void save_checkpoint(const std::string& path, const LanguageModel& model,
                            const Vocabulary& vocab) {
    auto& m = const_cast<LanguageModel&>(model);
    nlohmann::json manifest;
    manifest["format"] = "lll-ckpt-v1";
    manifest["model"] = {{"n_layers", model.config.n_layers},
                         {"n_heads", model.config.n_heads},
                         {"d_model", model.config.d_model},
                         {"context_len", model.config.context_len},
                         {"vocab_size", model.config.vocab_size}};
    nlohmann::json vj;
    vj["tokens"] = vocab.tokens;
    nlohmann::json tasks = nlohmann::json::array();
    for (const auto& [task, id] : vocab.task_bos) tasks.push_back({task, id});
    vj["tasks"] = std::move(tasks);
    manifest["vocab"] = std::move(vj);
    nlohmann::json params = nlohmann::json::array();
    for (auto& [name, t] : m.named_params()) params.push_back({name, t->shape});
    manifest["params"] = std::move(params);

    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("checkpoint: cannot open " + path + " for writing");
    os << manifest.dump() << '\n';
    for (auto& [name, t] : m.named_params())
        for (double v : t->data) {
            const uint64_t bits = detail::to_le_bits(v);
            os.write(reinterpret_cast<const char*>(&bits), sizeof bits);
        }
    if (!os) throw std::runtime_error("checkpoint: short write to " + path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("checkpoint: cannot open " + path);
    std::string line;
    std::getline(is, line);
    const auto manifest = nlohmann::json::parse(line);
    detail::require(manifest.at("format") == "lll-ckpt-v1",
                    "checkpoint: unsupported format in " + path);

    Checkpoint ck;
    const auto& mj = manifest.at("model");
    ck.model.config.n_layers = mj.at("n_layers").get<int>();
    ck.model.config.n_heads = mj.at("n_heads").get<int>();
    ck.model.config.d_model = mj.at("d_model").get<int>();
    ck.model.config.context_len = mj.at("context_len").get<int>();
    ck.model.config.vocab_size = mj.at("vocab_size").get<int>();
    ck.model = LanguageModel::init(ck.model.config, 0);  // shapes; data overwritten below

    const auto& vj = manifest.at("vocab");
    ck.vocab.tokens = vj.at("tokens").get<std::vector<std::string>>();
    ck.vocab.index.clear();
    for (size_t i = 0; i < ck.vocab.tokens.size(); ++i)
        ck.vocab.index.emplace(ck.vocab.tokens[i], static_cast<int>(i));
    for (const auto& entry : vj.at("tasks"))
        ck.vocab.task_bos.emplace_back(entry.at(0).get<std::string>(), entry.at(1).get<int>());

    auto named = ck.model.named_params();
    const auto& pj = manifest.at("params");
    detail::require(pj.size() == named.size(), "checkpoint: parameter count mismatch in " + path);
    for (size_t i = 0; i < named.size(); ++i) {
        const auto name = pj[i].at(0).get<std::string>();
        const auto shape = pj[i].at(1).get<Shape>();
        detail::require(name == named[i].first && shape == named[i].second->shape,
                        "checkpoint: parameter layout mismatch at " + name);
        for (double& v : named[i].second->data) {
            uint64_t bits;
            is.read(reinterpret_cast<char*>(&bits), sizeof bits);
            v = detail::from_le_bits(bits);
        }
    }
    if (!is) throw std::runtime_error("checkpoint: truncated data in " + path);
    check_finite(ck.model.tok_emb.data, "checkpoint token embedding");
    return ck;
}

}  // namespace lll
