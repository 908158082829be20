#include "dgseg/checkpoint.hpp"

#include <cstring>
#include <fstream>

namespace dgseg {

namespace fs = std::filesystem;

namespace {

constexpr char kMagic[8] = {'D', 'G', 'A', 'R', 'R', '\0', '\1', '\0'};
constexpr int kManifestVersion = 1;

template <typename T>
void put(std::ofstream& out, T v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::ifstream& in, const fs::path& p) {
    T v{};
    if (!in.read(reinterpret_cast<char*>(&v), sizeof(T))) throw DataError("checkpoint: truncated array " + p.string());
    return v;
}

}  // namespace

void write_array(const fs::path& path, const std::string& name, const RowMatrix& value) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("checkpoint: cannot write " + path.string());
    out.write(kMagic, sizeof(kMagic));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    put<std::uint8_t>(out, 1);
    put<std::uint8_t>(out, 2);
    put<std::uint64_t>(out, static_cast<std::uint64_t>(value.rows()));
    put<std::uint64_t>(out, static_cast<std::uint64_t>(value.cols()));
    out.write(reinterpret_cast<const char*>(value.data()), static_cast<std::streamsize>(sizeof(double) * value.size()));
}

RowMatrix read_array(const fs::path& path, std::string* name) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("checkpoint: missing array " + path.string());
    char magic[8];
    if (!in.read(magic, 8) || std::memcmp(magic, kMagic, 8) != 0)
        throw DataError("checkpoint: bad magic in " + path.string());
    const auto len = get<std::uint32_t>(in, path);
    std::string n(len, '\0');
    if (!in.read(n.data(), len)) throw DataError("checkpoint: truncated array " + path.string());
    if (get<std::uint8_t>(in, path) != 1) throw DataError("checkpoint: unsupported dtype in " + path.string());
    const auto ndim = get<std::uint8_t>(in, path);
    std::vector<std::uint64_t> dims;
    for (int i = 0; i < ndim; ++i) dims.push_back(get<std::uint64_t>(in, path));
    std::uint64_t rows = 1, cols = 1;
    if (ndim == 1) {
        rows = dims[0];
    } else if (ndim == 2) {
        rows = dims[0];
        cols = dims[1];
    } else {
        throw DataError("checkpoint: only 1-D and 2-D arrays are supported: " + path.string());
    }
    RowMatrix m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    if (!in.read(reinterpret_cast<char*>(m.data()), static_cast<std::streamsize>(sizeof(double) * m.size())))
        throw DataError("checkpoint: truncated array " + path.string());
    if (name) *name = std::move(n);
    return m;
}

namespace {

void save_params(const fs::path& dir, const nn::ParamSet& ps) {
    fs::create_directories(dir);
    for (const auto& p : ps) write_array(dir / (p.name + ".bin"), p.name, p.value);
}

nn::ParamSet load_params(const fs::path& dir, const nn::ParamSet& templ) {
    nn::ParamSet out = templ;
    for (auto& p : out) {
        std::string name;
        RowMatrix v = read_array(dir / (p.name + ".bin"), &name);
        if (name != p.name || v.rows() != p.value.rows() || v.cols() != p.value.cols())
            throw DataError("checkpoint: array " + p.name + " does not match the model layout");
        p.value = std::move(v);
    }
    return out;
}

}  // namespace

void save_checkpoint(const fs::path& dir, const CheckpointData& ck, const nn::ParamSet& templ) {
    fs::create_directories(dir);
    nlohmann::json m;
    m["version"] = kManifestVersion;
    m["stage"] = ck.stage;
    m["iteration"] = ck.iteration;
    m["config_hash"] = ck.config_hash;
    m["controller"] = controller_to_json(ck.controller);
    m["fusion_active"] = ck.fusion_active;
    m["models"] = nlohmann::json::array();
    if (ck.teacher) {
        save_params(dir / "teacher", *ck.teacher);
        m["models"].push_back("teacher");
    }
    if (ck.student) {
        save_params(dir / "student", *ck.student);
        m["models"].push_back("student");
    }
    m["optimizer_steps"] = ck.adam_t;
    if (!ck.adam_m.empty()) {
        fs::create_directories(dir / "optim" / "m");
        fs::create_directories(dir / "optim" / "v");
        for (std::size_t i = 0; i < templ.size(); ++i) {
            write_array(dir / "optim" / "m" / (templ[i].name + ".bin"), templ[i].name, ck.adam_m[i]);
            write_array(dir / "optim" / "v" / (templ[i].name + ".bin"), templ[i].name, ck.adam_v[i]);
        }
    }
    std::ofstream out(dir / "manifest.json");
    out << m.dump(2) << "\n";
}

CheckpointData load_checkpoint(const fs::path& dir, const nn::ParamSet& templ) {
    std::ifstream in(dir / "manifest.json");
    if (!in) throw DataError("checkpoint: no manifest.json in " + dir.string());
    nlohmann::json m;
    try {
        m = nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
        throw DataError(std::string("checkpoint: malformed manifest: ") + e.what());
    }
    CheckpointData ck;
    try {
        if (m.at("version").get<int>() != kManifestVersion) throw DataError("checkpoint: unsupported manifest version");
        ck.stage = m.at("stage").get<int>();
        ck.iteration = m.at("iteration").get<long>();
        ck.config_hash = m.at("config_hash").get<std::string>();
        ck.controller = controller_from_json(m.at("controller"));
        ck.fusion_active = m.value("fusion_active", false);
        for (const auto& name : m.at("models")) {
            if (name == "teacher") ck.teacher = load_params(dir / "teacher", templ);
            if (name == "student") ck.student = load_params(dir / "student", templ);
        }
        ck.adam_t = m.value("optimizer_steps", std::vector<long>{});
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("checkpoint: malformed manifest: ") + e.what());
    }
    if (!ck.adam_t.empty()) {
        for (const auto& p : templ) {
            ck.adam_m.push_back(read_array(dir / "optim" / "m" / (p.name + ".bin")));
            ck.adam_v.push_back(read_array(dir / "optim" / "v" / (p.name + ".bin")));
        }
    }
    return ck;
}

}  // namespace dgseg
