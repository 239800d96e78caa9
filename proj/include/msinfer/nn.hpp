#pragma once

#include "msinfer/rng.hpp"

#include <json.hpp>

#include <Eigen/Dense>

#include <cstddef>
#include <filesystem>
#include <string>
#include <vector>

namespace msinfer {

/// Dense NHWC tensor, row-major.
struct Tensor4 {
    std::size_t n = 0, h = 0, w = 0, c = 0;
    std::vector<double> data;

    Tensor4() = default;
    Tensor4(std::size_t n, std::size_t h, std::size_t w, std::size_t c, double fill = 0.0);

    [[nodiscard]] std::size_t size() const noexcept { return data.size(); }
    [[nodiscard]] std::size_t sample_size() const noexcept { return h * w * c; }
    double& at(std::size_t i, std::size_t y, std::size_t x, std::size_t ch) { return data[((i * h + y) * w + x) * c + ch]; }
    [[nodiscard]] double at(std::size_t i, std::size_t y, std::size_t x, std::size_t ch) const {
        return data[((i * h + y) * w + x) * c + ch];
    }
    /// Copy of the listed samples, in order.
    [[nodiscard]] Tensor4 gather(const std::vector<std::size_t>& rows) const;
};

enum class LayerKind { Conv2D, Dense, Flatten };
enum class Padding { Same, Valid };
enum class Activation { ReLU, Identity };

struct LayerSpec {
    LayerKind kind = LayerKind::Dense;
    /// Filters for Conv2D, units for Dense.
    std::size_t units = 0;
    std::size_t kh = 0, kw = 0;
    std::size_t sh = 1, sw = 1;
    Padding padding = Padding::Same;
    Activation activation = Activation::ReLU;

    static LayerSpec conv(std::size_t filters, std::size_t kernel, std::size_t stride, Padding padding = Padding::Same,
                          Activation act = Activation::ReLU);
    static LayerSpec dense(std::size_t units, Activation act = Activation::ReLU);
    static LayerSpec flatten();

    bool operator==(const LayerSpec&) const = default;
};

struct Shape3 {
    std::size_t h = 0, w = 0, c = 0;
    [[nodiscard]] std::size_t size() const noexcept { return h * w * c; }
    bool operator==(const Shape3&) const = default;
};

struct NetworkSpec {
    std::string name = "custom";
    Shape3 input;
    std::vector<LayerSpec> layers;

    /// Throws InvalidArgument when shapes do not chain.
    void validate() const;
    /// Output shape of every layer, in order.
    [[nodiscard]] std::vector<Shape3> shapes() const;
    [[nodiscard]] std::size_t output_dim() const;

    /// Three stride-2 3x3 convolutions (128, 128, 16 filters) on 25x25x1,
    /// then dense 4, 8, 16 and a linear 2-unit head.
    static NetworkSpec table1(std::size_t h = 25, std::size_t w = 25);
    /// Four stride-2 3x3 convolutions (128, 128, 128, 16), then dense
    /// 4, 8, 8, 8 and a linear 2-unit head.
    static NetworkSpec table3(std::size_t h = 25, std::size_t w = 25);
    static NetworkSpec by_name(const std::string& name, std::size_t h, std::size_t w);

    bool operator==(const NetworkSpec&) const = default;
};

[[nodiscard]] std::vector<std::size_t> layer_param_counts(const NetworkSpec& spec);
[[nodiscard]] std::size_t count_trainable(const NetworkSpec& spec);

[[nodiscard]] nlohmann::json to_json(const NetworkSpec& spec);
[[nodiscard]] NetworkSpec network_spec_from_json(const nlohmann::json& j);

struct TrainConfig {
    double learning_rate = 0.01;
    std::size_t epochs = 32;
    std::size_t batch_size = 40;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    std::uint64_t shuffle_seed = 0;

    void validate(std::size_t n_samples) const;
};

[[nodiscard]] nlohmann::json to_json(const TrainConfig& cfg);
[[nodiscard]] TrainConfig train_config_from_json(const nlohmann::json& j);

class Adam {
public:
    Adam(std::size_t n_params, double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);
    void step(std::vector<double>& params, const std::vector<double>& grad);
    [[nodiscard]] std::size_t steps() const noexcept { return t_; }

private:
    double lr_, b1_, b2_, eps_;
    std::size_t t_ = 0;
    std::vector<double> m_, v_;
};

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Cross-correlation of an NHWC input with HWIO kernels plus bias, no activation.
[[nodiscard]] Tensor4 conv2d_forward(const Tensor4& input, const std::vector<double>& weights,
                                     const std::vector<double>& bias, std::size_t kh, std::size_t kw, std::size_t sh,
                                     std::size_t sw, Padding padding);

/// Network parameters as one flat vector, layer by layer (kernel then bias).
class Network {
public:
    explicit Network(NetworkSpec spec);
    Network(NetworkSpec spec, std::vector<double> params);

    [[nodiscard]] const NetworkSpec& spec() const noexcept { return spec_; }
    [[nodiscard]] const std::vector<double>& params() const noexcept { return params_; }
    [[nodiscard]] std::vector<double>& params() noexcept { return params_; }
    /// Offset of each layer's parameter block in params().
    [[nodiscard]] const std::vector<std::size_t>& offsets() const noexcept { return offsets_; }

    /// He truncated-normal kernels (sd sqrt(2/fan_in), cut at 2 sd), zero biases.
    void initialize(RngStream& rng);

    /// n x output_dim predictions.
    [[nodiscard]] RowMatrix forward(const Tensor4& x) const;

    /// Mean over samples of the squared error norm, and its gradient with
    /// respect to params().
    double loss_and_gradient(const Tensor4& x, const RowMatrix& y, std::vector<double>& grad) const;

private:
    NetworkSpec spec_;
    std::vector<Shape3> shapes_;
    std::vector<std::size_t> offsets_;
    std::vector<double> params_;
};

struct TrainedNetwork {
    NetworkSpec spec;
    std::vector<double> weights;
    std::vector<double> loss_trace;
};

/// Adam on the per-batch mean squared error; epochs x ceil(n/batch) steps with
/// a fresh shuffle each epoch. Throws Diverged on a non-finite loss.
[[nodiscard]] TrainedNetwork train(const NetworkSpec& spec, const Tensor4& x, const RowMatrix& y,
                                   const TrainConfig& cfg, RngStream& rng);

[[nodiscard]] RowMatrix predict(const TrainedNetwork& net, const Tensor4& x);

/// Writes <prefix>.net.json and <prefix>.net.bin.
void save_network(const TrainedNetwork& net, const std::filesystem::path& prefix);
[[nodiscard]] TrainedNetwork load_network(const std::filesystem::path& prefix);

}  // namespace msinfer
