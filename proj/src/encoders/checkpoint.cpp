#include "regtext/encoders/checkpoint.hpp"

#include <cstdint>
#include <fstream>
#include <json.hpp>

#include "regtext/error.hpp"

namespace regtext::encoders {

namespace {

constexpr char kMagic[4] = {'R', 'T', 'C', 'P'};
constexpr std::uint32_t kVersion = 1;

nlohmann::ordered_json spec_to_json(const ModelSpec& spec) {
    return {{"encoder", encoder_name(spec.encoder)},
            {"embedding_dim", spec.embedding_dim},
            {"hidden_state", spec.hidden_state},
            {"num_kernel", spec.num_kernel},
            {"context_size", spec.context_size},
            {"stride", spec.stride},
            {"classifier_dim", spec.classifier_dim},
            {"dropout_rate", spec.dropout_rate},
            {"num_classes", spec.num_classes}};
}

ModelSpec spec_from_json(const nlohmann::json& j) {
    ModelSpec spec;
    spec.encoder = encoder_from_name(j.at("encoder").get<std::string>());
    spec.embedding_dim = j.at("embedding_dim").get<std::size_t>();
    spec.hidden_state = j.at("hidden_state").get<std::size_t>();
    spec.num_kernel = j.at("num_kernel").get<std::size_t>();
    spec.context_size = j.at("context_size").get<std::size_t>();
    spec.stride = j.at("stride").get<std::size_t>();
    spec.classifier_dim = j.at("classifier_dim").get<std::size_t>();
    spec.dropout_rate = j.at("dropout_rate").get<double>();
    spec.num_classes = j.at("num_classes").get<int>();
    return spec;
}

}  // namespace

void save_checkpoint(const std::string& path, const ModelState<float>& state) {
    nlohmann::ordered_json header;
    header["spec"] = spec_to_json(state.spec);
    header["train_embedding"] = state.train_embedding;

    std::vector<std::pair<std::string, TensorPtr<float>>> tensors;
    tensors.emplace_back("embedding", state.embedding);
    for (const auto& [name, t] : state.params) tensors.emplace_back(name, t);

    std::uint64_t offset = 0;
    nlohmann::ordered_json table = nlohmann::ordered_json::array();
    for (const auto& [name, t] : tensors) {
        table.push_back({{"name", name}, {"shape", t->shape}, {"offset", offset}});
        offset += t->size();
    }
    header["tensors"] = table;
    const std::string header_text = header.dump();

    std::ofstream out(path, std::ios::binary);
    check(out.good(), "checkpoint: cannot write ", path);
    out.write(kMagic, 4);
    const std::uint32_t version = kVersion;
    out.write(reinterpret_cast<const char*>(&version), sizeof(version));
    const std::uint64_t hlen = header_text.size();
    out.write(reinterpret_cast<const char*>(&hlen), sizeof(hlen));
    out.write(header_text.data(), static_cast<std::streamsize>(header_text.size()));
    for (const auto& [name, t] : tensors)
        out.write(reinterpret_cast<const char*>(t->data.data()),
                  static_cast<std::streamsize>(t->size() * sizeof(float)));
    check(out.good(), "checkpoint: write to ", path, " failed");
}

ModelState<float> load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    check(in.good(), "checkpoint: cannot open ", path);
    char magic[4];
    in.read(magic, 4);
    check(in.good() && std::equal(magic, magic + 4, kMagic), "checkpoint: ", path,
          " is not a model checkpoint");
    std::uint32_t version = 0;
    in.read(reinterpret_cast<char*>(&version), sizeof(version));
    check(version == kVersion, "checkpoint: unsupported version ", version);
    std::uint64_t hlen = 0;
    in.read(reinterpret_cast<char*>(&hlen), sizeof(hlen));
    std::string header_text(hlen, '\0');
    in.read(header_text.data(), static_cast<std::streamsize>(hlen));
    check(in.good(), "checkpoint: truncated header in ", path);

    nlohmann::json header;
    try {
        header = nlohmann::json::parse(header_text);
    } catch (const std::exception& e) {
        fail("checkpoint: bad header in ", path, ": ", e.what());
    }

    ModelState<float> state;
    state.spec = spec_from_json(header.at("spec"));
    state.train_embedding = header.at("train_embedding").get<bool>();
    for (const auto& entry : header.at("tensors")) {
        const auto name = entry.at("name").get<std::string>();
        const auto shape = entry.at("shape").get<Shape>();
        auto t = make_tensor<float>(shape);
        in.read(reinterpret_cast<char*>(t->data.data()),
                static_cast<std::streamsize>(t->size() * sizeof(float)));
        check(in.good(), "checkpoint: truncated tensor '", name, "' in ", path);
        t->requires_grad = true;
        if (name == "embedding")
            state.embedding = t;
        else
            state.params[name] = t;
    }
    check(state.embedding != nullptr, "checkpoint: ", path, " carries no embedding table");
    return state;
}

}  // namespace regtext::encoders
