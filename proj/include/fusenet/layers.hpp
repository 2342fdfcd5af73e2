#pragma once

#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "fusenet/graph.hpp"
#include "fusenet/rng.hpp"

namespace fusenet {

enum class Mode { train, eval };
enum class Activation { none, relu };

// Uniform Glorot initialization, samples in +-sqrt(6/(in+out)).
Matrix glorot_uniform(std::size_t in, std::size_t out, Rng& rng);

struct DenseLayer {
    Param W;  // in x out
    Param b;  // 1 x out, zero-initialized
    Activation act = Activation::none;

    DenseLayer(std::size_t in, std::size_t out, Activation a, Rng& rng);
};

// activation(x * W + b), bias broadcast across rows.
TensorRef dense_forward(Graph& g, DenseLayer& layer, TensorRef x);

struct BatchNormLayer {
    Param gamma;  // 1 x d, ones
    Param beta;   // 1 x d, zeros
    std::vector<double> running_mean;  // zeros
    std::vector<double> running_var;   // ones
    double momentum = 0.9;   // kept fraction of the old running stats
    double epsilon = 1e-5;

    BatchNormLayer(std::size_t d, double momentum, double epsilon);
};

// Train mode normalizes by batch statistics (biased variance) and updates the
// running stats with an exponential moving average (unbiased variance, the
// usual eval-time convention). Eval mode is an affine map built from the
// running stats. Train mode requires batch >= 2.
TensorRef batchnorm_forward(Graph& g, BatchNormLayer& layer, TensorRef x, Mode mode);

struct DropoutLayer {
    double rate = 0.0;  // probability of zeroing an entry; must be in [0, 1)

    explicit DropoutLayer(double r);
};

// Inverted dropout: train mode zeroes entries with probability rate and
// scales survivors by 1/(1-rate); eval mode and rate 0 are the identity.
TensorRef dropout_forward(Graph& g, const DropoutLayer& layer, TensorRef x, Mode mode, Rng& rng);

// Multilayer perceptron: hidden blocks of dense -> [batch norm] -> relu ->
// [dropout], then a dense head emitting logits.
class Mlp {
  public:
    struct Spec {
        std::size_t in = 0;
        std::vector<std::size_t> hidden;
        std::size_t out = 0;
        bool batchnorm = true;
        double dropout = 0.0;
        double bn_momentum = 0.9;
        double bn_epsilon = 1e-5;
    };

    Mlp(const Spec& spec, Rng& rng);

    // Returns logits. When taps is non-null it receives the output of every
    // hidden block followed by the logits (depth() entries).
    TensorRef forward(Graph& g, TensorRef x, Mode mode, Rng& dropout_rng,
                      std::vector<TensorRef>* taps = nullptr);

    std::size_t depth() const { return dense_.size(); }
    std::size_t in_width() const { return spec_.in; }
    std::size_t out_width() const { return spec_.out; }
    const Spec& spec() const { return spec_; }

    void collect_params(std::vector<Param*>& out);
    DenseLayer& dense(std::size_t i) { return dense_[i]; }

    // Every tensor of the layer stack, including running stats, for
    // serialization and snapshots. Names are prefixed with `prefix.`.
    struct NamedTensor {
        std::string name;
        std::size_t rows = 0;
        std::size_t cols = 0;
        std::vector<double>* data = nullptr;
    };
    void collect_state(const std::string& prefix, std::vector<NamedTensor>& out);

  private:
    Spec spec_;
    std::vector<DenseLayer> dense_;
    std::vector<BatchNormLayer> bn_;
    DropoutLayer drop_;
};

using NamedTensor = Mlp::NamedTensor;

// Flat binary parameter container, bit-exact round trip. Layout: magic
// "FUSE1", u32 record count, then per record u32 name length, name bytes,
// u64 rows, u64 cols, row-major doubles (little-endian).
void save_tensors(std::ostream& os, std::span<const NamedTensor> tensors);
void save_tensors(const std::string& path, std::span<const NamedTensor> tensors);
// Fills the given tensors by name; missing record or shape mismatch throws.
void load_tensors(std::istream& is, std::span<NamedTensor> tensors);
void load_tensors(const std::string& path, std::span<NamedTensor> tensors);

std::vector<std::vector<double>> snapshot_state(std::span<const NamedTensor> tensors);
void restore_state(std::span<NamedTensor> tensors, const std::vector<std::vector<double>>& snap);

}  // namespace fusenet
