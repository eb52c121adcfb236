#pragma once

// Checkpoint container: magic "T22C", a u32 entry count, one length-prefixed
// name plus tensor record per parameter (store order, so byte output is
// deterministic), then the model config as a u32-length-prefixed JSON
// trailer. The trailer makes a checkpoint self-describing: inference needs
// no separate config file.

#include <cstring>
#include <fstream>
#include <set>

#include "unet22/model.hpp"
#include "unet22/tensor_io.hpp"

namespace unet22 {

template <typename S>
void save_checkpoint(const std::string& path, const ModelConfig& cfg, const ParameterStoreT<S>& store) {
    cfg.validate();
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open checkpoint for writing: " + path);
    std::string head = "T22C";
    detail::put_u32(head, static_cast<uint32_t>(store.size()));
    out.write(head.data(), static_cast<std::streamsize>(head.size()));
    for (const auto& [name, t] : store) {
        std::string rec;
        detail::put_u16(rec, static_cast<uint16_t>(name.size()));
        rec += name;
        out.write(rec.data(), static_cast<std::streamsize>(rec.size()));
        write_tensor_record(out, t);
    }
    const std::string config = model_config_to_json(cfg).dump();
    std::string tail;
    detail::put_u32(tail, static_cast<uint32_t>(config.size()));
    tail += config;
    out.write(tail.data(), static_cast<std::streamsize>(tail.size()));
    if (!out) throw IoError("failed writing checkpoint: " + path);
}

// Loads and cross-checks the stored tensors against the parameter spec of
// the stored config, reporting the first offending name. Stored f64 records
// load into a float store by narrowing (and vice versa by widening).
template <typename S>
ModelConfig load_checkpoint(const std::string& path, ParameterStoreT<S>& store_out) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open checkpoint: " + path);
    char magic[4];
    detail::read_exact(in, magic, 4, "checkpoint magic");
    if (std::memcmp(magic, "T22C", 4) != 0) throw IoError("not a checkpoint file (bad magic): " + path);
    const uint32_t count = detail::get_u32(in, "checkpoint entry count");
    if (count > 1000000) throw IoError("checkpoint entry count " + std::to_string(count) + " is implausible");

    ParameterStoreT<S> store;
    for (uint32_t i = 0; i < count; ++i) {
        const uint16_t len = detail::get_u16(in, "parameter name length");
        if (len == 0) throw IoError("checkpoint contains an empty parameter name");
        std::string name(len, '\0');
        detail::read_exact(in, name.data(), len, "parameter name");
        store.insert(name, read_tensor_record<S>(in));
    }

    const uint32_t jlen = detail::get_u32(in, "config trailer length");
    if (jlen > (1u << 20)) throw IoError("checkpoint config trailer is implausibly large");
    std::string config_text(jlen, '\0');
    detail::read_exact(in, config_text.data(), jlen, "config trailer");
    ModelConfig cfg;
    try {
        cfg = model_config_from_json(nlohmann::json::parse(config_text));
    } catch (const nlohmann::json::exception& e) {
        throw IoError(std::string("checkpoint config trailer is not valid JSON: ") + e.what());
    }
    cfg.validate();

    const ParamSpec spec = parameter_spec(cfg);
    std::set<std::string> expected;
    for (const auto& [name, shape] : spec) {
        expected.insert(name);
        if (!store.contains(name)) throw IoError("checkpoint is missing parameter '" + name + "'");
        if (store.at(name).shape() != shape)
            throw IoError("checkpoint parameter '" + name + "' has shape " +
                          shape_str(store.at(name).shape()) + ", config requires " + shape_str(shape));
    }
    for (const auto& [name, t] : store)
        if (!expected.count(name)) throw IoError("checkpoint contains unexpected parameter '" + name + "'");

    store_out = std::move(store);
    return cfg;
}

}  // namespace unet22
