#include "mlns/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

#include "mlns/common.hpp"

static_assert(std::endian::native == std::endian::little,
              "checkpoint writer assumes a little-endian host");

namespace mlns {

namespace {

constexpr char kMagic[4] = {'M', 'L', 'N', 'S'};
constexpr uint32_t kCkptVersion = 1;

struct NamedTensor {
    std::string name;
    std::vector<uint32_t> dims;
    std::vector<double> data;
};

void append_tensor(std::string& out, const std::string& name,
                   const std::vector<uint32_t>& dims, const std::vector<double>& data) {
    auto put_u32 = [&](uint32_t v) { out.append(reinterpret_cast<const char*>(&v), 4); };
    put_u32(static_cast<uint32_t>(name.size()));
    out.append(name);
    put_u32(static_cast<uint32_t>(dims.size()));
    size_t total = 1;
    for (uint32_t d : dims) {
        put_u32(d);
        total *= d;
    }
    if (total != data.size()) throw io_error("checkpoint: dims do not match data for " + name);
    out.append(reinterpret_cast<const char*>(data.data()), data.size() * sizeof(double));
}

std::vector<NamedTensor> collect(const LayerGraph& graph, const ParamSet& params) {
    std::vector<NamedTensor> out;
    for (size_t li = 0; li < graph.layers.size(); ++li) {
        const auto& desc = graph.layers[li];
        const int ord = graph.ordinal[li];
        if (const auto* c = std::get_if<ConvLayer>(&desc)) {
            const std::string base = "conv" + std::to_string(ord + 1);
            const auto& g = c->geom;
            out.push_back({base + ".weight",
                           {static_cast<uint32_t>(g.out_channels), static_cast<uint32_t>(g.in_channels),
                            static_cast<uint32_t>(g.kernel_h), static_cast<uint32_t>(g.kernel_w)},
                           params.conv[ord].w});
            if (!params.conv[ord].b.empty())
                out.push_back({base + ".bias", {static_cast<uint32_t>(g.out_channels)},
                               params.conv[ord].b});
        } else if (const auto* f = std::get_if<FcLayer>(&desc)) {
            const std::string base = "fc" + std::to_string(ord + 1);
            out.push_back({base + ".weight",
                           {static_cast<uint32_t>(f->out), static_cast<uint32_t>(f->in)},
                           params.fc[ord].w});
            if (!params.fc[ord].b.empty())
                out.push_back({base + ".bias", {static_cast<uint32_t>(f->out)}, params.fc[ord].b});
        } else if (std::holds_alternative<NormLayer>(desc)) {
            const std::string base = "norm" + std::to_string(ord + 1);
            const auto& st = params.norm[ord];
            const uint32_t ch = static_cast<uint32_t>(st.channels);
            out.push_back({base + ".gamma", {ch}, st.gamma});
            out.push_back({base + ".beta", {ch}, st.beta});
            out.push_back({base + ".running_mean", {ch}, st.running_mean});
            out.push_back({base + ".running_var", {ch}, st.running_var});
            out.push_back({base + ".stats_ready", {1}, {st.stats_ready ? 1.0 : 0.0}});
        }
    }
    return out;
}

}  // namespace

void save_checkpoint(const std::string& path, const LayerGraph& graph, const ParamSet& params) {
    std::string buf;
    buf.append(kMagic, 4);
    uint32_t ver = kCkptVersion;
    buf.append(reinterpret_cast<const char*>(&ver), 4);
    for (const auto& t : collect(graph, params)) append_tensor(buf, t.name, t.dims, t.data);

    std::ofstream out(path + ".tmp", std::ios::binary | std::ios::trunc);
    if (!out) throw io_error(path + ": cannot open for writing");
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    out.close();
    if (std::rename((path + ".tmp").c_str(), path.c_str()) != 0)
        throw io_error(path + ": rename failed");
}

ParamSet load_checkpoint(const std::string& path, const LayerGraph& graph) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw io_error(path + ": cannot open");
    char magic[4];
    if (!in.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0)
        throw io_error(path + ": wrong magic (not an MLNS checkpoint)");
    uint32_t ver = 0;
    if (!in.read(reinterpret_cast<char*>(&ver), 4) || ver != kCkptVersion)
        throw io_error(path + ": unsupported checkpoint version");

    std::map<std::string, NamedTensor> tensors;
    while (true) {
        uint32_t name_len = 0;
        if (!in.read(reinterpret_cast<char*>(&name_len), 4)) break;  // clean EOF
        NamedTensor t;
        t.name.resize(name_len);
        uint32_t rank = 0;
        if (!in.read(t.name.data(), name_len) ||
            !in.read(reinterpret_cast<char*>(&rank), 4))
            throw io_error(path + ": truncated tensor header");
        t.dims.resize(rank);
        size_t total = 1;
        for (uint32_t i = 0; i < rank; ++i) {
            if (!in.read(reinterpret_cast<char*>(&t.dims[i]), 4))
                throw io_error(path + ": truncated dims");
            total *= t.dims[i];
        }
        t.data.resize(total);
        if (!in.read(reinterpret_cast<char*>(t.data.data()), total * sizeof(double)))
            throw io_error(path + ": truncated tensor data for " + t.name);
        tensors.emplace(t.name, std::move(t));
    }

    ParamSet params = init_params(graph, 0);
    auto take = [&](const std::string& name, size_t expect) -> std::vector<double> {
        auto it = tensors.find(name);
        if (it == tensors.end()) throw io_error(path + ": missing tensor " + name);
        if (it->second.data.size() != expect)
            throw io_error(path + ": tensor " + name + " has " +
                           std::to_string(it->second.data.size()) + " values, expected " +
                           std::to_string(expect));
        auto d = std::move(it->second.data);
        tensors.erase(it);
        return d;
    };

    for (size_t li = 0; li < graph.layers.size(); ++li) {
        const auto& desc = graph.layers[li];
        const int ord = graph.ordinal[li];
        if (std::holds_alternative<ConvLayer>(desc)) {
            const std::string base = "conv" + std::to_string(ord + 1);
            params.conv[ord].w = take(base + ".weight", params.conv[ord].w.size());
            if (!params.conv[ord].b.empty())
                params.conv[ord].b = take(base + ".bias", params.conv[ord].b.size());
        } else if (std::holds_alternative<FcLayer>(desc)) {
            const std::string base = "fc" + std::to_string(ord + 1);
            params.fc[ord].w = take(base + ".weight", params.fc[ord].w.size());
            if (!params.fc[ord].b.empty())
                params.fc[ord].b = take(base + ".bias", params.fc[ord].b.size());
        } else if (std::holds_alternative<NormLayer>(desc)) {
            const std::string base = "norm" + std::to_string(ord + 1);
            auto& st = params.norm[ord];
            const size_t ch = static_cast<size_t>(st.channels);
            st.gamma = take(base + ".gamma", ch);
            st.beta = take(base + ".beta", ch);
            st.running_mean = take(base + ".running_mean", ch);
            st.running_var = take(base + ".running_var", ch);
            st.stats_ready = take(base + ".stats_ready", 1)[0] != 0.0;
        }
    }
    if (!tensors.empty())
        throw io_error(path + ": unexpected tensor " + tensors.begin()->first);
    return params;
}

}  // namespace mlns
