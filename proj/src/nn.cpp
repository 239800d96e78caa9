#include "msinfer/nn.hpp"

#include "msinfer/bundle.hpp"
#include "msinfer/error.hpp"
#include "msinfer/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

namespace msinfer {

namespace {

using json = nlohmann::json;
using MapM = Eigen::Map<RowMatrix>;
using CMapM = Eigen::Map<const RowMatrix>;
using Idx = Eigen::Index;
using Buf = std::vector<double, Eigen::aligned_allocator<double>>;

struct ConvGeometry {
    std::size_t oh, ow, pad_top, pad_left;
};

ConvGeometry conv_geometry(std::size_t h, std::size_t w, const LayerSpec& l) {
    ConvGeometry g{};
    if (l.padding == Padding::Same) {
        g.oh = (h + l.sh - 1) / l.sh;
        g.ow = (w + l.sw - 1) / l.sw;
        const std::size_t need_h = (g.oh - 1) * l.sh + l.kh;
        const std::size_t need_w = (g.ow - 1) * l.sw + l.kw;
        g.pad_top = need_h > h ? (need_h - h) / 2 : 0;
        g.pad_left = need_w > w ? (need_w - w) / 2 : 0;
    } else {
        require(h >= l.kh && w >= l.kw, "valid convolution kernel larger than its input");
        g.oh = (h - l.kh) / l.sh + 1;
        g.ow = (w - l.kw) / l.sw + 1;
    }
    return g;
}

// Rows: (sample, oy, ox); columns: (ky, kx, ci), matching HWIO kernels.
void im2col(const double* in, std::size_t n, const Shape3& s, const LayerSpec& l, const ConvGeometry& g,
            RowMatrix& col) {
    const std::size_t k = l.kh * l.kw * s.c;
    col.resize(static_cast<Idx>(n * g.oh * g.ow), static_cast<Idx>(k));
    double* out = col.data();
    for (std::size_t i = 0; i < n; ++i) {
        const double* img = in + i * s.size();
        for (std::size_t oy = 0; oy < g.oh; ++oy) {
            for (std::size_t ox = 0; ox < g.ow; ++ox) {
                for (std::size_t ky = 0; ky < l.kh; ++ky) {
                    const auto y = static_cast<std::ptrdiff_t>(oy * l.sh + ky) - static_cast<std::ptrdiff_t>(g.pad_top);
                    for (std::size_t kx = 0; kx < l.kw; ++kx) {
                        const auto x =
                            static_cast<std::ptrdiff_t>(ox * l.sw + kx) - static_cast<std::ptrdiff_t>(g.pad_left);
                        if (y < 0 || x < 0 || y >= static_cast<std::ptrdiff_t>(s.h) ||
                            x >= static_cast<std::ptrdiff_t>(s.w)) {
                            std::fill_n(out, s.c, 0.0);
                        } else {
                            std::copy_n(img + (static_cast<std::size_t>(y) * s.w + static_cast<std::size_t>(x)) * s.c,
                                        s.c, out);
                        }
                        out += s.c;
                    }
                }
            }
        }
    }
}

void col2im(const RowMatrix& col, std::size_t n, const Shape3& s, const LayerSpec& l, const ConvGeometry& g,
            double* din) {
    std::fill_n(din, n * s.size(), 0.0);
    const double* src = col.data();
    for (std::size_t i = 0; i < n; ++i) {
        double* img = din + i * s.size();
        for (std::size_t oy = 0; oy < g.oh; ++oy) {
            for (std::size_t ox = 0; ox < g.ow; ++ox) {
                for (std::size_t ky = 0; ky < l.kh; ++ky) {
                    const auto y = static_cast<std::ptrdiff_t>(oy * l.sh + ky) - static_cast<std::ptrdiff_t>(g.pad_top);
                    for (std::size_t kx = 0; kx < l.kw; ++kx) {
                        const auto x =
                            static_cast<std::ptrdiff_t>(ox * l.sw + kx) - static_cast<std::ptrdiff_t>(g.pad_left);
                        if (y >= 0 && x >= 0 && y < static_cast<std::ptrdiff_t>(s.h) &&
                            x < static_cast<std::ptrdiff_t>(s.w)) {
                            double* dst = img + (static_cast<std::size_t>(y) * s.w + static_cast<std::size_t>(x)) * s.c;
                            for (std::size_t ci = 0; ci < s.c; ++ci) dst[ci] += src[ci];
                        }
                        src += s.c;
                    }
                }
            }
        }
    }
}

std::size_t fan_in(const LayerSpec& l, const Shape3& in) {
    return l.kind == LayerKind::Conv2D ? l.kh * l.kw * in.c : in.size();
}

std::size_t kernel_size(const LayerSpec& l, const Shape3& in) {
    return l.kind == LayerKind::Flatten ? 0 : fan_in(l, in) * l.units;
}

const char* kind_name(LayerKind k) {
    switch (k) {
        case LayerKind::Conv2D: return "conv2d";
        case LayerKind::Dense: return "dense";
        case LayerKind::Flatten: return "flatten";
    }
    return "?";
}

}  // namespace

Tensor4::Tensor4(std::size_t n_, std::size_t h_, std::size_t w_, std::size_t c_, double fill)
    : n(n_), h(h_), w(w_), c(c_), data(n_ * h_ * w_ * c_, fill) {
    require(n_ >= 1 && h_ >= 1 && w_ >= 1 && c_ >= 1, "tensor dimensions must be positive");
}

Tensor4 Tensor4::gather(const std::vector<std::size_t>& rows) const {
    Tensor4 out(rows.size(), h, w, c);
    const std::size_t ss = sample_size();
    for (std::size_t k = 0; k < rows.size(); ++k) {
        require(rows[k] < n, "tensor row out of range");
        std::copy_n(data.begin() + static_cast<std::ptrdiff_t>(rows[k] * ss), ss,
                    out.data.begin() + static_cast<std::ptrdiff_t>(k * ss));
    }
    return out;
}

LayerSpec LayerSpec::conv(std::size_t filters, std::size_t kernel, std::size_t stride, Padding padding,
                          Activation act) {
    return {LayerKind::Conv2D, filters, kernel, kernel, stride, stride, padding, act};
}

LayerSpec LayerSpec::dense(std::size_t units, Activation act) {
    return {LayerKind::Dense, units, 0, 0, 1, 1, Padding::Same, act};
}

LayerSpec LayerSpec::flatten() { return {LayerKind::Flatten, 0, 0, 0, 1, 1, Padding::Same, Activation::Identity}; }

std::vector<Shape3> NetworkSpec::shapes() const {
    require(input.h >= 1 && input.w >= 1 && input.c >= 1, "network input shape must be positive");
    require(!layers.empty(), "network has no layers");
    std::vector<Shape3> out;
    Shape3 s = input;
    for (std::size_t i = 0; i < layers.size(); ++i) {
        const auto& l = layers[i];
        const std::string where = "layer " + std::to_string(i) + ": ";
        switch (l.kind) {
            case LayerKind::Conv2D: {
                require(l.units >= 1 && l.kh >= 1 && l.kw >= 1 && l.sh >= 1 && l.sw >= 1,
                        where + "conv2d needs filters, kernel and stride");
                require(s.h > 1 || s.w > 1 || s.c >= 1, where + "bad input");
                const auto g = conv_geometry(s.h, s.w, l);
                s = {g.oh, g.ow, l.units};
                break;
            }
            case LayerKind::Dense:
                require(l.units >= 1, where + "dense needs units");
                require(s.h == 1 && s.w == 1, where + "dense input must be flat (add a flatten layer)");
                s = {1, 1, l.units};
                break;
            case LayerKind::Flatten:
                s = {1, 1, s.size()};
                break;
        }
        out.push_back(s);
    }
    return out;
}

void NetworkSpec::validate() const { (void)shapes(); }

std::size_t NetworkSpec::output_dim() const {
    const auto s = shapes().back();
    require(s.h == 1 && s.w == 1, "network output must be flat");
    return s.c;
}

NetworkSpec NetworkSpec::table1(std::size_t h, std::size_t w) {
    NetworkSpec s;
    s.name = "table1";
    s.input = {h, w, 1};
    s.layers = {LayerSpec::conv(128, 3, 2), LayerSpec::conv(128, 3, 2), LayerSpec::conv(16, 3, 2),
                LayerSpec::flatten(),       LayerSpec::dense(4),         LayerSpec::dense(8),
                LayerSpec::dense(16),       LayerSpec::dense(2, Activation::Identity)};
    return s;
}

NetworkSpec NetworkSpec::table3(std::size_t h, std::size_t w) {
    NetworkSpec s;
    s.name = "table3";
    s.input = {h, w, 1};
    s.layers = {LayerSpec::conv(128, 3, 2), LayerSpec::conv(128, 3, 2), LayerSpec::conv(128, 3, 2),
                LayerSpec::conv(16, 3, 2),  LayerSpec::flatten(),       LayerSpec::dense(4),
                LayerSpec::dense(8),        LayerSpec::dense(8),        LayerSpec::dense(8),
                LayerSpec::dense(2, Activation::Identity)};
    return s;
}

NetworkSpec NetworkSpec::by_name(const std::string& name, std::size_t h, std::size_t w) {
    if (name == "table1") return table1(h, w);
    if (name == "table3") return table3(h, w);
    fail(ErrorKind::InvalidArgument, "unknown network '" + name + "' (expected table1 or table3)");
}

std::vector<std::size_t> layer_param_counts(const NetworkSpec& spec) {
    const auto shapes = spec.shapes();
    std::vector<std::size_t> counts;
    Shape3 in = spec.input;
    for (std::size_t i = 0; i < spec.layers.size(); ++i) {
        const auto& l = spec.layers[i];
        if (l.kind != LayerKind::Flatten) counts.push_back(kernel_size(l, in) + l.units);
        in = shapes[i];
    }
    return counts;
}

std::size_t count_trainable(const NetworkSpec& spec) {
    std::size_t total = 0;
    for (auto c : layer_param_counts(spec)) total += c;
    return total;
}

json to_json(const NetworkSpec& spec) {
    json layers = json::array();
    for (const auto& l : spec.layers) {
        json j{{"kind", kind_name(l.kind)}};
        if (l.kind != LayerKind::Flatten) {
            j["units"] = l.units;
            j["activation"] = l.activation == Activation::ReLU ? "relu" : "identity";
        }
        if (l.kind == LayerKind::Conv2D) {
            j["kernel"] = {l.kh, l.kw};
            j["stride"] = {l.sh, l.sw};
            j["padding"] = l.padding == Padding::Same ? "same" : "valid";
        }
        layers.push_back(std::move(j));
    }
    return {{"name", spec.name}, {"input", {spec.input.h, spec.input.w, spec.input.c}}, {"layers", layers}};
}

NetworkSpec network_spec_from_json(const json& j) {
    NetworkSpec spec;
    try {
        spec.name = j.value("name", std::string("custom"));
        const auto in = j.at("input");
        spec.input = {in.at(0).get<std::size_t>(), in.at(1).get<std::size_t>(), in.at(2).get<std::size_t>()};
        for (const auto& lj : j.at("layers")) {
            const auto kind = lj.at("kind").get<std::string>();
            LayerSpec l;
            if (kind == "flatten") {
                l = LayerSpec::flatten();
            } else {
                const auto act_name = lj.value("activation", std::string("relu"));
                if (act_name != "relu" && act_name != "identity") fail(ErrorKind::Schema, "unknown activation " + act_name);
                const auto act = act_name == "relu" ? Activation::ReLU : Activation::Identity;
                if (kind == "dense") {
                    l = LayerSpec::dense(lj.at("units").get<std::size_t>(), act);
                } else if (kind == "conv2d") {
                    const auto pad = lj.value("padding", std::string("same"));
                    if (pad != "same" && pad != "valid") fail(ErrorKind::Schema, "unknown padding " + pad);
                    l = LayerSpec::conv(lj.at("units").get<std::size_t>(), 1, 1,
                                        pad == "same" ? Padding::Same : Padding::Valid, act);
                    l.kh = lj.at("kernel").at(0).get<std::size_t>();
                    l.kw = lj.at("kernel").at(1).get<std::size_t>();
                    l.sh = lj.at("stride").at(0).get<std::size_t>();
                    l.sw = lj.at("stride").at(1).get<std::size_t>();
                } else {
                    fail(ErrorKind::Schema, "unknown layer kind " + kind);
                }
            }
            spec.layers.push_back(l);
        }
    } catch (const json::exception& e) {
        fail(ErrorKind::Schema, std::string("malformed network spec: ") + e.what());
    }
    spec.validate();
    return spec;
}

void TrainConfig::validate(std::size_t n_samples) const {
    require(learning_rate > 0.0 && std::isfinite(learning_rate), "learning rate must be positive");
    require(batch_size >= 1, "batch size must be at least 1");
    require(batch_size <= n_samples, "batch size exceeds the number of training samples");
    require(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0 && epsilon > 0.0, "invalid Adam constants");
}

json to_json(const TrainConfig& c) {
    return {{"learning_rate", c.learning_rate}, {"epochs", c.epochs}, {"batch_size", c.batch_size},
            {"beta1", c.beta1},                 {"beta2", c.beta2},   {"epsilon", c.epsilon},
            {"shuffle_seed", c.shuffle_seed}};
}

TrainConfig train_config_from_json(const json& j) {
    TrainConfig c;
    try {
        c.learning_rate = j.value("learning_rate", c.learning_rate);
        c.epochs = j.value("epochs", c.epochs);
        c.batch_size = j.value("batch_size", c.batch_size);
        c.beta1 = j.value("beta1", c.beta1);
        c.beta2 = j.value("beta2", c.beta2);
        c.epsilon = j.value("epsilon", c.epsilon);
        c.shuffle_seed = j.value("shuffle_seed", c.shuffle_seed);
    } catch (const json::exception& e) {
        fail(ErrorKind::Schema, std::string("malformed training config: ") + e.what());
    }
    return c;
}

Adam::Adam(std::size_t n_params, double lr, double beta1, double beta2, double eps)
    : lr_(lr), b1_(beta1), b2_(beta2), eps_(eps), m_(n_params, 0.0), v_(n_params, 0.0) {}

void Adam::step(std::vector<double>& params, const std::vector<double>& grad) {
    require(params.size() == m_.size() && grad.size() == m_.size(), "Adam parameter count mismatch");
    ++t_;
    const double c1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
    for (std::size_t i = 0; i < params.size(); ++i) {
        m_[i] = b1_ * m_[i] + (1.0 - b1_) * grad[i];
        v_[i] = b2_ * v_[i] + (1.0 - b2_) * grad[i] * grad[i];
        params[i] -= lr_ * (m_[i] / c1) / (std::sqrt(v_[i] / c2) + eps_);
    }
}

Tensor4 conv2d_forward(const Tensor4& input, const std::vector<double>& weights, const std::vector<double>& bias,
                       std::size_t kh, std::size_t kw, std::size_t sh, std::size_t sw, Padding padding) {
    require(kh >= 1 && kw >= 1 && sh >= 1 && sw >= 1, "kernel and stride must be positive");
    const std::size_t cout = bias.size();
    require(cout >= 1 && weights.size() == kh * kw * input.c * cout, "kernel shape does not match input channels");
    LayerSpec l = LayerSpec::conv(cout, 1, 1, padding, Activation::Identity);
    l.kh = kh, l.kw = kw, l.sh = sh, l.sw = sw;
    const Shape3 s{input.h, input.w, input.c};
    const auto g = conv_geometry(s.h, s.w, l);
    RowMatrix col;
    im2col(input.data.data(), input.n, s, l, g, col);
    Tensor4 out(input.n, g.oh, g.ow, cout);
    MapM o(out.data.data(), col.rows(), static_cast<Idx>(cout));
    o.noalias() = col * CMapM(weights.data(), col.cols(), static_cast<Idx>(cout));
    o.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(bias.data(), static_cast<Idx>(cout));
    return out;
}

Network::Network(NetworkSpec spec) : spec_(std::move(spec)), shapes_(spec_.shapes()) {
    std::size_t offset = 0;
    Shape3 in = spec_.input;
    for (std::size_t i = 0; i < spec_.layers.size(); ++i) {
        offsets_.push_back(offset);
        const auto& l = spec_.layers[i];
        if (l.kind != LayerKind::Flatten) offset += kernel_size(l, in) + l.units;
        in = shapes_[i];
    }
    params_.assign(offset, 0.0);
}

Network::Network(NetworkSpec spec, std::vector<double> params) : Network(std::move(spec)) {
    if (params.size() != params_.size())
        fail(ErrorKind::CorruptFile, "network expects " + std::to_string(params_.size()) + " parameters, got " +
                                         std::to_string(params.size()));
    params_ = std::move(params);
}

void Network::initialize(RngStream& rng) {
    std::fill(params_.begin(), params_.end(), 0.0);
    Shape3 in = spec_.input;
    for (std::size_t i = 0; i < spec_.layers.size(); ++i) {
        const auto& l = spec_.layers[i];
        if (l.kind != LayerKind::Flatten) {
            const double sd = std::sqrt(2.0 / static_cast<double>(fan_in(l, in)));
            const std::size_t nk = kernel_size(l, in);
            for (std::size_t k = 0; k < nk; ++k) {
                double z = rng.normal();
                while (std::abs(z) > 2.0) z = rng.normal();
                params_[offsets_[i] + k] = sd * z;
            }
        }
        in = shapes_[i];
    }
}

RowMatrix Network::forward(const Tensor4& x) const {
    require(x.h == spec_.input.h && x.w == spec_.input.w && x.c == spec_.input.c,
            "input shape does not match the network");
    const std::size_t out_dim = shapes_.back().size();
    RowMatrix result(static_cast<Idx>(x.n), static_cast<Idx>(out_dim));
    const Buf params(params_.begin(), params_.end());

    // One sample at a time so a sample's output never depends on its batch.
    parallel_for(x.n, [&](std::size_t i) {
        Buf cur(x.data.begin() + static_cast<std::ptrdiff_t>(i * x.sample_size()),
                x.data.begin() + static_cast<std::ptrdiff_t>((i + 1) * x.sample_size()));
        Buf next;
        RowMatrix col;
        Shape3 in = spec_.input;
        for (std::size_t li = 0; li < spec_.layers.size(); ++li) {
            const auto& l = spec_.layers[li];
            const Shape3 out = shapes_[li];
            const double* w = params.data() + offsets_[li];
            if (l.kind == LayerKind::Flatten) {
                in = out;
                continue;
            }
            next.assign(out.size(), 0.0);
            MapM o(next.data(), static_cast<Idx>(out.h * out.w), static_cast<Idx>(out.c));
            const std::size_t k = fan_in(l, in);
            const CMapM wm(w, static_cast<Idx>(k), static_cast<Idx>(l.units));
            const Eigen::Map<const Eigen::RowVectorXd> b(w + k * l.units, static_cast<Idx>(l.units));
            if (l.kind == LayerKind::Conv2D) {
                im2col(cur.data(), 1, in, l, conv_geometry(in.h, in.w, l), col);
                o.noalias() = col * wm;
            } else {
                o.noalias() = CMapM(cur.data(), 1, static_cast<Idx>(k)) * wm;
            }
            o.rowwise() += b;
            if (l.activation == Activation::ReLU) o = o.cwiseMax(0.0);
            cur.swap(next);
            in = out;
        }
        result.row(static_cast<Idx>(i)) = Eigen::Map<const Eigen::RowVectorXd>(cur.data(), static_cast<Idx>(out_dim));
    });
    return result;
}

double Network::loss_and_gradient(const Tensor4& x, const RowMatrix& y, std::vector<double>& grad) const {
    require(x.h == spec_.input.h && x.w == spec_.input.w && x.c == spec_.input.c,
            "input shape does not match the network");
    const std::size_t n = x.n;
    const std::size_t L = spec_.layers.size();
    require(static_cast<std::size_t>(y.rows()) == n && static_cast<std::size_t>(y.cols()) == shapes_.back().size(),
            "target shape does not match the network output");

    const Buf params(params_.begin(), params_.end());
    std::vector<Buf> acts(L + 1);
    std::vector<RowMatrix> cols(L);
    acts[0].assign(x.data.begin(), x.data.end());
    std::vector<Shape3> in_shapes(L);
    Shape3 in = spec_.input;
    for (std::size_t li = 0; li < L; ++li) {
        in_shapes[li] = in;
        const auto& l = spec_.layers[li];
        const Shape3 out = shapes_[li];
        if (l.kind == LayerKind::Flatten) {
            acts[li + 1] = acts[li];
            in = out;
            continue;
        }
        const double* w = params.data() + offsets_[li];
        const std::size_t k = fan_in(l, in);
        acts[li + 1].assign(n * out.size(), 0.0);
        MapM o(acts[li + 1].data(), static_cast<Idx>(n * out.h * out.w), static_cast<Idx>(out.c));
        const CMapM wm(w, static_cast<Idx>(k), static_cast<Idx>(l.units));
        if (l.kind == LayerKind::Conv2D) {
            im2col(acts[li].data(), n, in, l, conv_geometry(in.h, in.w, l), cols[li]);
            o.noalias() = cols[li] * wm;
        } else {
            o.noalias() = CMapM(acts[li].data(), static_cast<Idx>(n), static_cast<Idx>(k)) * wm;
        }
        o.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(w + k * l.units, static_cast<Idx>(l.units));
        if (l.activation == Activation::ReLU) o = o.cwiseMax(0.0);
        in = out;
    }

    const CMapM pred(acts[L].data(), static_cast<Idx>(n), y.cols());
    const RowMatrix diff = pred - y;
    const double loss = diff.squaredNorm() / static_cast<double>(n);

    Buf g(params_.size(), 0.0);
    Buf delta(diff.data(), diff.data() + diff.size());
    for (double& d : delta) d *= 2.0 / static_cast<double>(n);
    Buf delta_in;

    for (std::size_t li = L; li-- > 0;) {
        const auto& l = spec_.layers[li];
        if (l.kind == LayerKind::Flatten) continue;
        const Shape3 s_in = in_shapes[li];
        const Shape3 out = shapes_[li];
        if (l.activation == Activation::ReLU) {
            const auto& a = acts[li + 1];
            for (std::size_t q = 0; q < delta.size(); ++q)
                if (!(a[q] > 0.0)) delta[q] = 0.0;
        }
        const std::size_t k = fan_in(l, s_in);
        const double* w = params.data() + offsets_[li];
        double* gw = g.data() + offsets_[li];
        const CMapM d(delta.data(), static_cast<Idx>(n * out.h * out.w), static_cast<Idx>(out.c));
        MapM gwm(gw, static_cast<Idx>(k), static_cast<Idx>(l.units));
        Eigen::Map<Eigen::RowVectorXd> gb(gw + k * l.units, static_cast<Idx>(l.units));
        gb = d.colwise().sum();
        const CMapM wm(w, static_cast<Idx>(k), static_cast<Idx>(l.units));
        const bool need_input_grad = li > 0;
        if (l.kind == LayerKind::Conv2D) {
            gwm.noalias() = cols[li].transpose() * d;
            if (need_input_grad) {
                RowMatrix dcol = d * wm.transpose();
                delta_in.resize(n * s_in.size());
                col2im(dcol, n, s_in, l, conv_geometry(s_in.h, s_in.w, l), delta_in.data());
            }
        } else {
            const CMapM a(acts[li].data(), static_cast<Idx>(n), static_cast<Idx>(k));
            gwm.noalias() = a.transpose() * d;
            if (need_input_grad) {
                delta_in.resize(n * k);
                MapM(delta_in.data(), static_cast<Idx>(n), static_cast<Idx>(k)).noalias() = d * wm.transpose();
            }
        }
        if (need_input_grad) delta.swap(delta_in);
    }
    grad.assign(g.begin(), g.end());
    return loss;
}

TrainedNetwork train(const NetworkSpec& spec, const Tensor4& x, const RowMatrix& y, const TrainConfig& cfg,
                     RngStream& rng) {
    require(static_cast<std::size_t>(y.rows()) == x.n, "inputs and targets have different sample counts");
    cfg.validate(x.n);
    Network net(spec);
    require(static_cast<std::size_t>(y.cols()) == spec.output_dim(), "targets do not match the network output");
    RngStream init_rng = rng.split(0);
    net.initialize(init_rng);

    RngStream shuffle_rng(cfg.shuffle_seed, 0x5eedULL);
    Adam adam(net.params().size(), cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.epsilon);
    TrainedNetwork result;
    result.spec = spec;

    std::vector<std::size_t> order(x.n);
    std::vector<double> grad;
    const std::size_t steps = (x.n + cfg.batch_size - 1) / cfg.batch_size;
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        for (std::size_t i = 0; i < x.n; ++i) order[i] = i;
        for (std::size_t i = x.n - 1; i > 0; --i) std::swap(order[i], order[shuffle_rng.uniform_index(i + 1)]);
        double epoch_loss = 0.0;
        for (std::size_t step = 0; step < steps; ++step) {
            const std::size_t lo = step * cfg.batch_size;
            const std::size_t hi = std::min(x.n, lo + cfg.batch_size);
            const std::vector<std::size_t> rows(order.begin() + static_cast<std::ptrdiff_t>(lo),
                                                order.begin() + static_cast<std::ptrdiff_t>(hi));
            const Tensor4 xb = x.gather(rows);
            RowMatrix yb(static_cast<Idx>(rows.size()), y.cols());
            for (std::size_t r = 0; r < rows.size(); ++r) yb.row(static_cast<Idx>(r)) = y.row(static_cast<Idx>(rows[r]));
            const double loss = net.loss_and_gradient(xb, yb, grad);
            bool finite = std::isfinite(loss);
            for (double g : grad) finite = finite && std::isfinite(g);
            if (!finite)
                fail(ErrorKind::Diverged, "training diverged at epoch " + std::to_string(epoch + 1) + ", step " +
                                              std::to_string(step + 1));
            adam.step(net.params(), grad);
            epoch_loss += loss * static_cast<double>(hi - lo);
        }
        result.loss_trace.push_back(epoch_loss / static_cast<double>(x.n));
    }
    result.weights = net.params();
    return result;
}

RowMatrix predict(const TrainedNetwork& net, const Tensor4& x) {
    return Network(net.spec, net.weights).forward(x);
}

void save_network(const TrainedNetwork& net, const std::filesystem::path& prefix) {
    const std::filesystem::path meta = prefix.string() + ".net.json";
    const std::filesystem::path bin = prefix.string() + ".net.bin";
    require(net.weights.size() == count_trainable(net.spec), "weight count does not match the network spec");
    write_f64_le(bin, net.weights);
    json j{{"spec", to_json(net.spec)},
           {"n_params", net.weights.size()},
           {"format", "float64-le"},
           {"loss_trace", net.loss_trace}};
    std::ofstream out(meta, std::ios::trunc);
    if (!out) fail(ErrorKind::Io, "cannot open " + meta.string() + " for writing");
    out << j.dump(2) << '\n';
    if (!out) fail(ErrorKind::Io, "write failed: " + meta.string());
}

TrainedNetwork load_network(const std::filesystem::path& prefix) {
    const std::filesystem::path meta = prefix.string() + ".net.json";
    const std::filesystem::path bin = prefix.string() + ".net.bin";
    std::ifstream in(meta);
    if (!in) fail(ErrorKind::Io, "cannot open " + meta.string());
    json j;
    try {
        j = json::parse(in);
    } catch (const json::exception& e) {
        fail(ErrorKind::CorruptFile, meta.string() + ": " + e.what());
    }
    TrainedNetwork net;
    if (!j.contains("spec")) fail(ErrorKind::Schema, meta.string() + ": missing spec");
    net.spec = network_spec_from_json(j["spec"]);
    if (j.contains("loss_trace")) net.loss_trace = j["loss_trace"].get<std::vector<double>>();
    net.weights = read_f64_le(bin);
    if (net.weights.size() != count_trainable(net.spec))
        fail(ErrorKind::CorruptFile, bin.string() + ": expected " + std::to_string(count_trainable(net.spec)) +
                                         " weights, found " + std::to_string(net.weights.size()));
    return net;
}

}  // namespace msinfer
