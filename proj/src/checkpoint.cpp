#include "hpm/checkpoint.hpp"

#include <fstream>
#include <stdexcept>
#include <vector>

namespace hpm {

namespace {

std::string dtype_name(torch::ScalarType t) {
    switch (t) {
        case torch::kFloat32: return "f32";
        case torch::kFloat64: return "f64";
        case torch::kInt64: return "i64";
        default: throw std::runtime_error("checkpoint: unsupported dtype");
    }
}

torch::ScalarType dtype_from(const std::string& s) {
    if (s == "f32") return torch::kFloat32;
    if (s == "f64") return torch::kFloat64;
    if (s == "i64") return torch::kInt64;
    throw std::runtime_error("checkpoint: unknown dtype " + s);
}

}  // namespace

void save_checkpoint(const std::filesystem::path& dir,
                     const std::map<std::string, torch::Tensor>& tensors,
                     const nlohmann::json& meta) {
    std::filesystem::create_directories(dir);
    nlohmann::json manifest = meta;
    manifest["format"] = "hpm3d-checkpoint-v1";

    std::ofstream blob(dir / "tensors.bin", std::ios::binary);
    int64_t offset = 0;
    nlohmann::json table = nlohmann::json::object();
    for (const auto& [name, t] : tensors) {
        auto c = t.detach().cpu().contiguous();
        int64_t bytes = c.numel() * static_cast<int64_t>(c.element_size());
        nlohmann::json e;
        e["dtype"] = dtype_name(c.scalar_type());
        e["shape"] = std::vector<int64_t>(c.sizes().begin(), c.sizes().end());
        e["offset"] = offset;
        e["bytes"] = bytes;
        table[name] = e;
        blob.write(static_cast<const char*>(c.data_ptr()), bytes);
        offset += bytes;
    }
    manifest["tensors"] = table;
    std::ofstream(dir / "manifest.json") << manifest.dump(2) << "\n";
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& dir) {
    std::ifstream mf(dir / "manifest.json");
    if (!mf) throw std::runtime_error("checkpoint: missing manifest.json in " + dir.string());
    LoadedCheckpoint out;
    out.meta = nlohmann::json::parse(mf);
    std::ifstream blob(dir / "tensors.bin", std::ios::binary);
    if (!blob) throw std::runtime_error("checkpoint: missing tensors.bin in " + dir.string());

    for (const auto& [name, e] : out.meta["tensors"].items()) {
        auto shape = e["shape"].get<std::vector<int64_t>>();
        auto t = torch::empty(shape, dtype_from(e["dtype"].get<std::string>()));
        blob.seekg(e["offset"].get<int64_t>());
        blob.read(static_cast<char*>(t.data_ptr()), e["bytes"].get<int64_t>());
        if (!blob) throw std::runtime_error("checkpoint: short read for tensor " + name);
        out.tensors[name] = t;
    }
    return out;
}

int load_by_prefix(const std::map<std::string, torch::Tensor>& tensors,
                   const std::string& src_prefix, torch::nn::Module& module,
                   const std::string& dst_prefix) {
    torch::NoGradGuard ng;
    auto params = module.named_parameters();
    int copied = 0;
    for (const auto& [name, t] : tensors) {
        if (name.rfind(src_prefix, 0) != 0) continue;
        std::string dst = dst_prefix + name.substr(src_prefix.size());
        auto* p = params.find(dst);
        if (p == nullptr) continue;
        if (p->sizes() != t.sizes())
            throw std::runtime_error("load_by_prefix: shape mismatch at " + dst);
        p->copy_(t);
        ++copied;
    }
    return copied;
}

}  // namespace hpm
