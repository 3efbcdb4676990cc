#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "tomoguard/errors.hpp"

namespace tomoguard::neuralcore {

enum class Activation { Relu, Identity };

struct DenseLayer {
    std::vector<std::vector<double>> weights;  // out_dim rows of in_dim
    std::vector<double> bias;                  // out_dim
    Activation act = Activation::Identity;

    std::size_t in_dim() const { return weights.empty() ? 0 : weights[0].size(); }
    std::size_t out_dim() const { return weights.size(); }
};

struct DenseNet {
    std::vector<DenseLayer> layers;

    std::size_t in_dim() const { return layers.empty() ? 0 : layers.front().in_dim(); }
    std::size_t out_dim() const { return layers.empty() ? 0 : layers.back().out_dim(); }
};

inline std::vector<double> forward(const DenseNet& net, const std::vector<double>& x) {
    if (net.layers.empty()) throw DimensionMismatch("empty net");
    if (x.size() != net.in_dim()) throw DimensionMismatch("forward: input dimension");
    std::vector<double> cur = x;
    for (const auto& layer : net.layers) {
        if (cur.size() != layer.in_dim())
            throw DimensionMismatch("forward: layer dimension chain broken");
        std::vector<double> next(layer.out_dim(), 0.0);
        for (std::size_t o = 0; o < layer.out_dim(); ++o) {
            double s = layer.bias[o];
            const auto& row = layer.weights[o];
            for (std::size_t i = 0; i < row.size(); ++i) s += row[i] * cur[i];
            if (layer.act == Activation::Relu && s < 0.0) s = 0.0;
            if (!std::isfinite(s)) throw NonFiniteOutput("forward: non-finite activation");
            next[o] = s;
        }
        cur = std::move(next);
    }
    return cur;
}

/// Glorot-uniform weights (|w| <= sqrt(6/(fan_in+fan_out))), zero biases.
inline DenseNet init_params(const std::vector<std::size_t>& dims,
                            const std::vector<Activation>& acts, std::uint64_t rng_seed) {
    if (dims.size() < 2) throw DimensionMismatch("need at least input and output dims");
    if (acts.size() != dims.size() - 1)
        throw DimensionMismatch("one activation per layer required");
    std::mt19937_64 eng(rng_seed);
    DenseNet net;
    for (std::size_t li = 0; li + 1 < dims.size(); ++li) {
        DenseLayer layer;
        layer.act = acts[li];
        double a = std::sqrt(6.0 / static_cast<double>(dims[li] + dims[li + 1]));
        std::uniform_real_distribution<double> w(-a, a);
        layer.weights.assign(dims[li + 1], std::vector<double>(dims[li], 0.0));
        layer.bias.assign(dims[li + 1], 0.0);
        for (auto& row : layer.weights)
            for (auto& v : row) v = w(eng);
        net.layers.push_back(std::move(layer));
    }
    return net;
}

/// Same shape as init_params but all weights and biases zero; used for heads
/// that must start as exact no-ops.
inline DenseNet zero_params(const std::vector<std::size_t>& dims,
                            const std::vector<Activation>& acts) {
    if (dims.size() < 2) throw DimensionMismatch("need at least input and output dims");
    if (acts.size() != dims.size() - 1)
        throw DimensionMismatch("one activation per layer required");
    DenseNet net;
    for (std::size_t li = 0; li + 1 < dims.size(); ++li) {
        DenseLayer layer;
        layer.act = acts[li];
        layer.weights.assign(dims[li + 1], std::vector<double>(dims[li], 0.0));
        layer.bias.assign(dims[li + 1], 0.0);
        net.layers.push_back(std::move(layer));
    }
    return net;
}

inline std::size_t param_count(const DenseNet& net) {
    std::size_t n = 0;
    for (const auto& l : net.layers) n += l.out_dim() * l.in_dim() + l.bias.size();
    return n;
}

inline void append_flat(const DenseNet& net, std::vector<double>& out) {
    for (const auto& l : net.layers) {
        for (const auto& row : l.weights) out.insert(out.end(), row.begin(), row.end());
        out.insert(out.end(), l.bias.begin(), l.bias.end());
    }
}

inline void load_flat(DenseNet& net, const std::vector<double>& flat, std::size_t& cursor) {
    for (auto& l : net.layers) {
        for (auto& row : l.weights)
            for (auto& v : row) v = flat.at(cursor++);
        for (auto& v : l.bias) v = flat.at(cursor++);
    }
}

/// Flat parameter view with a stable name->span index, shared by the trainer
/// and the checkpoint format.
struct ParamVector {
    std::vector<double> values;
    std::vector<std::pair<std::string, std::size_t>> index;  // (name, length), in order

    std::size_t size() const { return values.size(); }
};

// ---------------------------------------------------------------------------
// Gradient estimation

struct GradientConfig {
    bool spsa = false;
    double step = 1e-4;        // central-difference h, or SPSA probe radius c
    std::size_t probes = 1;    // SPSA: averaged Rademacher directions
    std::uint64_t rng_seed = 0;
};

/// Central differences per coordinate, or simultaneous-perturbation (SPSA)
/// with Rademacher directions when cfg.spsa is set. f must be deterministic
/// for the duration of the call (common random numbers are the caller's job).
template <typename F>
std::vector<double> numeric_gradient(F&& f, const std::vector<double>& theta,
                                     const GradientConfig& cfg = {}) {
    std::vector<double> grad(theta.size(), 0.0);
    if (theta.empty()) return grad;

    if (!cfg.spsa) {
        std::vector<double> probe = theta;
        for (std::size_t i = 0; i < theta.size(); ++i) {
            probe[i] = theta[i] + cfg.step;
            double up = f(probe);
            probe[i] = theta[i] - cfg.step;
            double down = f(probe);
            probe[i] = theta[i];
            if (!std::isfinite(up) || !std::isfinite(down))
                throw NonFiniteValue("numeric_gradient: non-finite probe");
            grad[i] = (up - down) / (2.0 * cfg.step);
        }
        return grad;
    }

    std::mt19937_64 eng(cfg.rng_seed);
    std::uniform_int_distribution<int> coin(0, 1);
    std::vector<double> dir(theta.size());
    std::vector<double> probe(theta.size());
    for (std::size_t p = 0; p < cfg.probes; ++p) {
        for (auto& d : dir) d = coin(eng) ? 1.0 : -1.0;
        for (std::size_t i = 0; i < theta.size(); ++i)
            probe[i] = theta[i] + cfg.step * dir[i];
        double up = f(probe);
        for (std::size_t i = 0; i < theta.size(); ++i)
            probe[i] = theta[i] - cfg.step * dir[i];
        double down = f(probe);
        if (!std::isfinite(up) || !std::isfinite(down))
            throw NonFiniteValue("numeric_gradient: non-finite probe");
        double scale = (up - down) / (2.0 * cfg.step);
        for (std::size_t i = 0; i < theta.size(); ++i) grad[i] += scale * dir[i];
    }
    for (auto& g : grad) g /= static_cast<double>(cfg.probes);
    return grad;
}

// ---------------------------------------------------------------------------
// Adam

struct AdamState {
    double lr = 0.01;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    std::vector<double> m;
    std::vector<double> v;
    std::size_t t = 0;
};

inline void adam_step(AdamState& st, std::vector<double>& theta,
                      const std::vector<double>& grad) {
    if (st.m.empty()) {
        st.m.assign(theta.size(), 0.0);
        st.v.assign(theta.size(), 0.0);
    }
    if (grad.size() != theta.size() || st.m.size() != theta.size())
        throw DimensionMismatch("adam_step: size mismatch");
    ++st.t;
    double c1 = 1.0 - std::pow(st.beta1, static_cast<double>(st.t));
    double c2 = 1.0 - std::pow(st.beta2, static_cast<double>(st.t));
    for (std::size_t i = 0; i < theta.size(); ++i) {
        st.m[i] = st.beta1 * st.m[i] + (1.0 - st.beta1) * grad[i];
        st.v[i] = st.beta2 * st.v[i] + (1.0 - st.beta2) * grad[i] * grad[i];
        double mhat = st.m[i] / c1;
        double vhat = st.v[i] / c2;
        theta[i] -= st.lr * mhat / (std::sqrt(vhat) + st.eps);
    }
}

// ---------------------------------------------------------------------------
// Checkpoint format: magic line, little-endian u64 JSON header length, JSON
// index map, then the flat parameter array as little-endian float64.

constexpr char kCheckpointMagic[] = "TGCKPT1\n";

inline void save_checkpoint(const std::string& path, const ParamVector& params) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw CheckpointError("cannot open for write: " + path);

    nlohmann::json header;
    header["total"] = params.values.size();
    header["index"] = nlohmann::json::array();
    std::size_t off = 0;
    for (const auto& [name, len] : params.index) {
        header["index"].push_back({{"name", name}, {"offset", off}, {"size", len}});
        off += len;
    }
    if (off != params.values.size())
        throw CheckpointError("index does not cover the parameter vector");

    std::string hs = header.dump();
    os.write(kCheckpointMagic, sizeof(kCheckpointMagic) - 1);
    std::uint64_t len = hs.size();
    unsigned char lenb[8];
    for (int i = 0; i < 8; ++i) lenb[i] = static_cast<unsigned char>((len >> (8 * i)) & 0xff);
    os.write(reinterpret_cast<const char*>(lenb), 8);
    os.write(hs.data(), static_cast<std::streamsize>(hs.size()));
    for (double v : params.values) {
        std::uint64_t bits;
        std::memcpy(&bits, &v, 8);
        unsigned char b[8];
        for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((bits >> (8 * i)) & 0xff);
        os.write(reinterpret_cast<const char*>(b), 8);
    }
    if (!os) throw CheckpointError("write failed: " + path);
}

inline ParamVector load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw CheckpointError("cannot open: " + path);

    char magic[sizeof(kCheckpointMagic) - 1];
    is.read(magic, sizeof(magic));
    if (!is || std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0)
        throw CheckpointError("bad magic: " + path);

    unsigned char lenb[8];
    is.read(reinterpret_cast<char*>(lenb), 8);
    if (!is) throw CheckpointError("truncated header length: " + path);
    std::uint64_t len = 0;
    for (int i = 0; i < 8; ++i) len |= static_cast<std::uint64_t>(lenb[i]) << (8 * i);
    if (len > (1u << 20)) throw CheckpointError("header oversized: " + path);

    std::string hs(len, '\0');
    is.read(hs.data(), static_cast<std::streamsize>(len));
    if (!is) throw CheckpointError("truncated header: " + path);

    nlohmann::json header;
    try {
        header = nlohmann::json::parse(hs);
    } catch (const std::exception& e) {
        throw CheckpointError(std::string("bad header json: ") + e.what());
    }

    ParamVector out;
    std::size_t total = header.at("total").get<std::size_t>();
    std::size_t covered = 0;
    for (const auto& ent : header.at("index")) {
        std::size_t off = ent.at("offset").get<std::size_t>();
        std::size_t sz = ent.at("size").get<std::size_t>();
        if (off != covered) throw CheckpointError("non-contiguous index map");
        covered = off + sz;
        out.index.emplace_back(ent.at("name").get<std::string>(), sz);
    }
    if (covered != total) throw CheckpointError("index does not cover parameter vector");

    out.values.assign(total, 0.0);
    for (std::size_t i = 0; i < total; ++i) {
        unsigned char b[8];
        is.read(reinterpret_cast<char*>(b), 8);
        if (!is) throw CheckpointError("truncated parameter data: " + path);
        std::uint64_t bits = 0;
        for (int j = 0; j < 8; ++j) bits |= static_cast<std::uint64_t>(b[j]) << (8 * j);
        double v;
        std::memcpy(&v, &bits, 8);
        out.values[i] = v;
    }
    return out;
}

}  // namespace tomoguard::neuralcore
