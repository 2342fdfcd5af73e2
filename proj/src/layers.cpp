#include "fusenet/layers.hpp"

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <unordered_map>

namespace fusenet {

static_assert(std::endian::native == std::endian::little,
              "parameter container assumes a little-endian host");

Matrix glorot_uniform(std::size_t in, std::size_t out, Rng& rng) {
    if (in == 0 || out == 0) {
        throw ContractError("glorot_uniform: zero dimension " + std::to_string(in) + "x" +
                            std::to_string(out));
    }
    const double bound = std::sqrt(6.0 / static_cast<double>(in + out));
    Matrix w(in, out);
    for (double& v : w.a) v = rng.uniform(-bound, bound);
    return w;
}

DenseLayer::DenseLayer(std::size_t in, std::size_t out, Activation a, Rng& rng)
    : W(glorot_uniform(in, out, rng)), b(1, out), act(a) {}

TensorRef dense_forward(Graph& g, DenseLayer& layer, TensorRef x) {
    if (g.value(x).cols != layer.W.value.rows) {
        throw ShapeError("dense_forward: input width " + std::to_string(g.value(x).cols) +
                         " does not match layer input " + std::to_string(layer.W.value.rows));
    }
    TensorRef out = g.row_add(g.matmul(x, g.leaf(layer.W)), g.leaf(layer.b));
    if (layer.act == Activation::relu) out = g.relu(out);
    return out;
}

BatchNormLayer::BatchNormLayer(std::size_t d, double mom, double eps)
    : gamma(Matrix(1, d, std::vector<double>(d, 1.0))),
      beta(1, d),
      running_mean(d, 0.0),
      running_var(d, 1.0),
      momentum(mom),
      epsilon(eps) {
    if (!(mom > 0.0 && mom < 1.0)) throw ContractError("batch norm momentum must be in (0,1)");
    if (!(eps > 0.0)) throw ContractError("batch norm epsilon must be > 0");
}

TensorRef batchnorm_forward(Graph& g, BatchNormLayer& layer, TensorRef x, Mode mode) {
    const std::size_t d = layer.running_mean.size();
    if (g.value(x).cols != d) {
        throw ShapeError("batchnorm_forward: input width " + std::to_string(g.value(x).cols) +
                         " does not match layer width " + std::to_string(d));
    }
    if (mode == Mode::train) {
        std::vector<double> mean, var;
        TensorRef out = g.batchnorm_train(x, g.leaf(layer.gamma), g.leaf(layer.beta),
                                          layer.epsilon, &mean, &var);
        const double m = static_cast<double>(g.value(x).rows);
        const double unbias = m / (m - 1.0);
        for (std::size_t j = 0; j < d; ++j) {
            layer.running_mean[j] =
                layer.momentum * layer.running_mean[j] + (1.0 - layer.momentum) * mean[j];
            layer.running_var[j] =
                layer.momentum * layer.running_var[j] + (1.0 - layer.momentum) * var[j] * unbias;
        }
        return out;
    }
    // eval: y = gamma/sqrt(rv+eps) * (x - rm) + beta, built from running stats
    Matrix inv_std(1, d);
    Matrix rm(1, d);
    for (std::size_t j = 0; j < d; ++j) {
        inv_std.a[j] = 1.0 / std::sqrt(layer.running_var[j] + layer.epsilon);
        rm.a[j] = layer.running_mean[j];
    }
    TensorRef s = g.mul(g.leaf(layer.gamma), g.constant(inv_std));
    TensorRef shift = g.sub(g.leaf(layer.beta), g.mul(g.constant(rm), s));
    return g.row_add(g.row_mul(x, s), shift);
}

DropoutLayer::DropoutLayer(double r) : rate(r) {
    if (!(r >= 0.0 && r < 1.0)) {
        throw ContractError("dropout rate must be in [0,1), got " + std::to_string(r));
    }
}

TensorRef dropout_forward(Graph& g, const DropoutLayer& layer, TensorRef x, Mode mode, Rng& rng) {
    if (mode == Mode::eval || layer.rate == 0.0) return x;
    const Matrix& xv = g.value(x);
    Matrix mask(xv.rows, xv.cols);
    const double keep_scale = 1.0 / (1.0 - layer.rate);
    for (double& v : mask.a) v = rng.bernoulli(layer.rate) ? 0.0 : keep_scale;
    return g.mul(x, g.constant(std::move(mask)));
}

Mlp::Mlp(const Spec& spec, Rng& rng) : spec_(spec), drop_(spec.dropout) {
    if (spec.in == 0 || spec.out == 0) throw ContractError("Mlp: zero input or output width");
    std::vector<std::size_t> widths;
    widths.push_back(spec.in);
    widths.insert(widths.end(), spec.hidden.begin(), spec.hidden.end());
    widths.push_back(spec.out);
    for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
        dense_.emplace_back(widths[i], widths[i + 1], Activation::none, rng);
        if (spec.batchnorm && i + 2 < widths.size()) {
            bn_.emplace_back(widths[i + 1], spec.bn_momentum, spec.bn_epsilon);
        }
    }
}

TensorRef Mlp::forward(Graph& g, TensorRef x, Mode mode, Rng& dropout_rng,
                       std::vector<TensorRef>* taps) {
    TensorRef h = x;
    for (std::size_t i = 0; i < dense_.size(); ++i) {
        h = dense_forward(g, dense_[i], h);
        const bool is_head = (i + 1 == dense_.size());
        if (!is_head) {
            if (spec_.batchnorm) h = batchnorm_forward(g, bn_[i], h, mode);
            h = g.relu(h);
            h = dropout_forward(g, drop_, h, mode, dropout_rng);
        }
        if (taps) taps->push_back(h);
    }
    return h;
}

void Mlp::collect_params(std::vector<Param*>& out) {
    for (DenseLayer& d : dense_) {
        out.push_back(&d.W);
        out.push_back(&d.b);
    }
    for (BatchNormLayer& b : bn_) {
        out.push_back(&b.gamma);
        out.push_back(&b.beta);
    }
}

void Mlp::collect_state(const std::string& prefix, std::vector<NamedTensor>& out) {
    for (std::size_t i = 0; i < dense_.size(); ++i) {
        const std::string base = prefix + ".dense" + std::to_string(i);
        out.push_back({base + ".W", dense_[i].W.value.rows, dense_[i].W.value.cols,
                       &dense_[i].W.value.a});
        out.push_back({base + ".b", 1, dense_[i].b.value.cols, &dense_[i].b.value.a});
    }
    for (std::size_t i = 0; i < bn_.size(); ++i) {
        const std::string base = prefix + ".bn" + std::to_string(i);
        const std::size_t d = bn_[i].running_mean.size();
        out.push_back({base + ".gamma", 1, d, &bn_[i].gamma.value.a});
        out.push_back({base + ".beta", 1, d, &bn_[i].beta.value.a});
        out.push_back({base + ".running_mean", 1, d, &bn_[i].running_mean});
        out.push_back({base + ".running_var", 1, d, &bn_[i].running_var});
    }
}

namespace {

constexpr char kMagic[5] = {'F', 'U', 'S', 'E', '1'};

template <typename T>
void write_pod(std::ostream& os, T v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& is) {
    T v{};
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!is) throw IoError("parameter container truncated");
    return v;
}

}  // namespace

void save_tensors(std::ostream& os, std::span<const NamedTensor> tensors) {
    os.write(kMagic, sizeof(kMagic));
    write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(tensors.size()));
    for (const NamedTensor& t : tensors) {
        write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(t.name.size()));
        os.write(t.name.data(), static_cast<std::streamsize>(t.name.size()));
        write_pod<std::uint64_t>(os, t.rows);
        write_pod<std::uint64_t>(os, t.cols);
        os.write(reinterpret_cast<const char*>(t.data->data()),
                 static_cast<std::streamsize>(t.data->size() * sizeof(double)));
    }
    if (!os) throw IoError("failed writing parameter container");
}

void save_tensors(const std::string& path, std::span<const NamedTensor> tensors) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open for writing: " + path);
    save_tensors(os, tensors);
}

void load_tensors(std::istream& is, std::span<NamedTensor> tensors) {
    char magic[5];
    is.read(magic, sizeof(magic));
    if (!is || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
        throw ParseError("not a FUSE1 parameter container");
    }
    const auto count = read_pod<std::uint32_t>(is);
    std::unordered_map<std::string, std::vector<double>> records;
    std::unordered_map<std::string, std::pair<std::uint64_t, std::uint64_t>> shapes;
    for (std::uint32_t r = 0; r < count; ++r) {
        const auto name_len = read_pod<std::uint32_t>(is);
        std::string name(name_len, '\0');
        is.read(name.data(), name_len);
        const auto rows = read_pod<std::uint64_t>(is);
        const auto cols = read_pod<std::uint64_t>(is);
        std::vector<double> data(rows * cols);
        is.read(reinterpret_cast<char*>(data.data()),
                static_cast<std::streamsize>(data.size() * sizeof(double)));
        if (!is) throw IoError("parameter container truncated in record " + name);
        shapes[name] = {rows, cols};
        records[name] = std::move(data);
    }
    for (NamedTensor& t : tensors) {
        auto it = records.find(t.name);
        if (it == records.end()) throw ParseError("missing parameter record: " + t.name);
        const auto [rows, cols] = shapes[t.name];
        if (rows != t.rows || cols != t.cols) {
            throw ShapeError("parameter record " + t.name + " has shape " + std::to_string(rows) +
                             "x" + std::to_string(cols) + ", expected " + std::to_string(t.rows) +
                             "x" + std::to_string(t.cols));
        }
        *t.data = std::move(it->second);
    }
}

void load_tensors(const std::string& path, std::span<NamedTensor> tensors) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open for reading: " + path);
    load_tensors(is, tensors);
}

std::vector<std::vector<double>> snapshot_state(std::span<const NamedTensor> tensors) {
    std::vector<std::vector<double>> snap;
    snap.reserve(tensors.size());
    for (const NamedTensor& t : tensors) snap.push_back(*t.data);
    return snap;
}

void restore_state(std::span<NamedTensor> tensors, const std::vector<std::vector<double>>& snap) {
    if (snap.size() != tensors.size()) throw ContractError("snapshot/state size mismatch");
    for (std::size_t i = 0; i < tensors.size(); ++i) *tensors[i].data = snap[i];
}

}  // namespace fusenet
