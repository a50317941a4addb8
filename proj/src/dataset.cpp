#include "hpm/dataset.hpp"

#include <fstream>
#include <iomanip>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>

#include "hpm/rng.hpp"

namespace hpm {

nlohmann::json DatasetManifest::to_json() const {
    nlohmann::json j;
    j["seed"] = seed;
    j["num_classes"] = num_classes;
    j["class_names"] = class_names;
    j["cases"] = nlohmann::json::array();
    for (size_t i = 0; i < case_ids.size(); ++i)
        j["cases"].push_back({{"id", case_ids[i]}, {"split", splits[i]}});
    return j;
}

DatasetManifest DatasetManifest::from_json(const nlohmann::json& j) {
    DatasetManifest m;
    m.seed = j.at("seed").get<uint64_t>();
    m.num_classes = j.at("num_classes").get<int>();
    m.class_names = j.at("class_names").get<std::vector<std::string>>();
    for (const auto& c : j.at("cases")) {
        m.case_ids.push_back(c.at("id").get<std::string>());
        m.splits.push_back(c.at("split").get<std::string>());
    }
    return m;
}

DatasetManifest generate_dataset(const DatasetSpec& spec,
                                 const std::filesystem::path& dir, bool force) {
    namespace fs = std::filesystem;
    if (spec.train_fraction + spec.val_fraction > 1.0 + 1e-12)
        throw std::invalid_argument("generate_dataset: split fractions sum to > 1");
    if (spec.num_cases < 1)
        throw std::invalid_argument("generate_dataset: num_cases must be >= 1");
    if (fs::exists(dir) && !fs::is_empty(dir) && !force)
        throw std::runtime_error("generate_dataset: " + dir.string() +
                                 " is not empty (use --force to overwrite)");
    fs::create_directories(dir);

    DatasetManifest m;
    m.seed = spec.seed;
    m.num_classes = spec.num_organs + 1;
    m.class_names.push_back("background");
    for (int k = 1; k <= spec.num_organs; ++k)
        m.class_names.push_back("organ" + std::to_string(k));

    const int64_t n_train =
        static_cast<int64_t>(std::llround(spec.train_fraction * spec.num_cases));
    const int64_t n_val =
        static_cast<int64_t>(std::llround(spec.val_fraction * spec.num_cases));

    // deterministic split: shuffle case order, then slice
    std::vector<int64_t> order(static_cast<size_t>(spec.num_cases));
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 rng(splitmix64(spec.seed ^ 0x5913));
    for (size_t i = order.size(); i > 1; --i)
        std::swap(order[i - 1], order[rng() % i]);

    std::vector<std::string> split_of(static_cast<size_t>(spec.num_cases));
    for (int64_t i = 0; i < spec.num_cases; ++i) {
        const auto idx = static_cast<size_t>(order[static_cast<size_t>(i)]);
        split_of[idx] = i < n_train ? "train" : (i < n_train + n_val ? "val" : "test");
    }

    for (int64_t i = 0; i < spec.num_cases; ++i) {
        PhantomSpec ps;
        ps.grid_size = spec.grid_size;
        ps.num_organs = spec.num_organs;
        ps.noise_sigma = spec.noise_sigma;
        ps.seed = mix_seed(spec.seed, static_cast<uint64_t>(i));
        auto v = generate_phantom(ps);

        std::ostringstream id;
        id << "case_" << std::setfill('0') << std::setw(3) << i;
        save_volume(v, dir / id.str(), m.class_names);
        m.case_ids.push_back(id.str());
        m.splits.push_back(split_of[static_cast<size_t>(i)]);
    }

    std::ofstream(dir / "manifest.json") << m.to_json().dump(2) << "\n";
    return m;
}

DatasetManifest load_manifest(const std::filesystem::path& dir) {
    std::ifstream f(dir / "manifest.json");
    if (!f) throw std::runtime_error("load_manifest: missing manifest.json in " +
                                     dir.string());
    return DatasetManifest::from_json(nlohmann::json::parse(f));
}

std::vector<Volume> load_split(const std::filesystem::path& dir,
                               const std::string& split) {
    auto m = load_manifest(dir);
    std::vector<Volume> out;
    for (size_t i = 0; i < m.case_ids.size(); ++i)
        if (m.splits[i] == split) out.push_back(load_volume(dir / m.case_ids[i]));
    return out;
}

}  // namespace hpm
