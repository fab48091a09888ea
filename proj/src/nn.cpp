#include "mimo/nn.hpp"

#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>

#include "mimo/text_io.hpp"

namespace mimo {

namespace {

std::span<double> span_of(Matrix& m) { return {m.data(), static_cast<std::size_t>(m.size())}; }
std::span<double> span_of(Vector& v) { return {v.data(), static_cast<std::size_t>(v.size())}; }
std::span<const double> span_of(const Matrix& m) { return {m.data(), static_cast<std::size_t>(m.size())}; }
std::span<const double> span_of(const Vector& v) { return {v.data(), static_cast<std::size_t>(v.size())}; }

std::string dims(Eigen::Index r, Eigen::Index c) { return std::to_string(r) + "x" + std::to_string(c); }

}  // namespace

void validate(const NetworkSpec& spec) {
    if (spec.nodes == 0) throw std::invalid_argument("network: node count must be positive");
    if (spec.input_features == 0) throw std::invalid_argument("network: input feature count must be positive");
    if (spec.classes < 2) throw std::invalid_argument("network: need at least 2 classes");
    if (!(spec.keep_prob > 0.0 && spec.keep_prob <= 1.0))
        throw std::invalid_argument("network: keep_prob must be in (0, 1], got " + format_double(spec.keep_prob));
    for (std::size_t l = 0; l < spec.layers.size(); ++l) {
        if (spec.layers[l].p_out == 0 || spec.layers[l].k_taps == 0)
            throw std::invalid_argument("network: layer " + std::to_string(l) + " needs positive width and taps");
    }
}

Network::Network(NetworkSpec spec, Gso gso) : spec_(std::move(spec)), gso_(std::move(gso)) {
    validate(spec_);
    if (gso_.size() != spec_.nodes)
        throw std::invalid_argument("network: GSO size " + std::to_string(gso_.size()) + " != node count " +
                                    std::to_string(spec_.nodes));
    std::size_t q_in = spec_.input_features;
    for (const auto& l : spec_.layers) {
        layers_.emplace_back(l.structure, l.p_out, q_in, l.k_taps);
        if (spec_.conv_bias) conv_b_.push_back(Vector::Zero(conv_bias_size(l.structure, l.p_out)));
        q_in = l.p_out;
    }
    readout_w_ = Matrix::Zero(spec_.classes, q_in * spec_.nodes);
    readout_b_ = Vector::Zero(spec_.classes);
}

std::size_t Network::conv_param_count() const {
    std::size_t total = 0;
    for (const auto& l : layers_) total += l.param_count();
    return total;
}

std::size_t Network::conv_bias_count() const {
    std::size_t total = 0;
    for (const auto& b : conv_b_) total += static_cast<std::size_t>(b.size());
    return total;
}

std::size_t Network::param_count() const {
    return conv_param_count() + conv_bias_count() + static_cast<std::size_t>(readout_w_.size() + readout_b_.size());
}

std::vector<std::span<double>> Network::parameters() {
    std::vector<std::span<double>> out;
    for (auto& l : layers_) out.push_back(l.values());
    for (auto& b : conv_b_) out.push_back(span_of(b));
    out.push_back(span_of(readout_w_));
    out.push_back(span_of(readout_b_));
    return out;
}

std::vector<std::span<const double>> Network::parameters() const {
    std::vector<std::span<const double>> out;
    for (const auto& l : layers_) out.push_back(l.values());
    for (const auto& b : conv_b_) out.push_back(span_of(b));
    out.push_back(span_of(readout_w_));
    out.push_back(span_of(readout_b_));
    return out;
}

std::vector<std::string> Network::parameter_names() const {
    std::vector<std::string> names;
    for (std::size_t l = 0; l < layers_.size(); ++l)
        names.push_back("layer" + std::to_string(l) + "." + to_string(layers_[l].structure()));
    for (std::size_t l = 0; l < conv_b_.size(); ++l) names.push_back("layer" + std::to_string(l) + ".bias");
    names.emplace_back("readout.weights");
    names.emplace_back("readout.bias");
    return names;
}

bool operator==(const Network& a, const Network& b) {
    return a.layers_ == b.layers_ && a.conv_b_ == b.conv_b_ && a.readout_w_ == b.readout_w_ && a.readout_b_ == b.readout_b_ &&
           a.spec_.nodes == b.spec_.nodes && a.spec_.classes == b.spec_.classes &&
           a.spec_.input_features == b.spec_.input_features && a.spec_.keep_prob == b.spec_.keep_prob &&
           a.spec_.conv_bias == b.spec_.conv_bias && a.spec_.normalize_input == b.spec_.normalize_input &&
           a.gso_.row_ptr() == b.gso_.row_ptr() && a.gso_.col_idx() == b.gso_.col_idx() &&
           a.gso_.values() == b.gso_.values() && a.gso_.kind() == b.gso_.kind();
}

void initialize(Network& net, Rng& rng) {
    for (std::size_t l = 0; l < net.num_layers(); ++l) {
        auto& layer = net.layer(l);
        const double bound = std::sqrt(1.0 / static_cast<double>(layer.q_in() * layer.k_taps()));
        std::uniform_real_distribution<double> dist(-bound, bound);
        for (double& v : layer.values()) v = dist(rng);
        if (net.spec().conv_bias) net.layer_bias(l).setZero();
    }
    auto& w = net.readout_weights();
    const double bound = std::sqrt(1.0 / static_cast<double>(w.cols()));
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = dist(rng);
    net.readout_bias().setZero();
}

std::size_t conv_bias_size(Structure s, std::size_t p_out) {
    return s == Structure::ConsolidateOutputs ? 1 : p_out;
}

Matrix relu(const Matrix& x) { return x.cwiseMax(0.0); }

Matrix relu_backward(const Matrix& x, const Matrix& d_out) {
    if (x.rows() != d_out.rows() || x.cols() != d_out.cols())
        throw std::invalid_argument("relu_backward: shape mismatch " + dims(x.rows(), x.cols()) + " vs " +
                                    dims(d_out.rows(), d_out.cols()));
    return (x.array() > 0.0).select(d_out, 0.0);
}

DropoutResult dropout(const Matrix& x, double keep_prob, Mode mode, Rng* rng) {
    if (!(keep_prob > 0.0 && keep_prob <= 1.0))
        throw std::invalid_argument("dropout: keep_prob must be in (0, 1], got " + format_double(keep_prob));
    DropoutResult r;
    if (mode == Mode::Eval || keep_prob == 1.0) {
        r.y = x;
        r.mask = Matrix::Ones(x.rows(), x.cols());
        return r;
    }
    if (rng == nullptr) throw std::invalid_argument("dropout: training mode needs an RNG");
    std::bernoulli_distribution keep(keep_prob);
    const double scale = 1.0 / keep_prob;
    r.mask.resize(x.rows(), x.cols());
    for (Eigen::Index i = 0; i < r.mask.size(); ++i) r.mask.data()[i] = keep(*rng) ? scale : 0.0;
    r.y = x.cwiseProduct(r.mask);
    return r;
}

namespace {

/// Readout geometry: N from the weight width and feature count, B from the feature width.
std::pair<Eigen::Index, Eigen::Index> readout_shape(const Matrix& weights, const Matrix& features, const char* where) {
    const auto f = features.rows();
    if (f == 0 || weights.cols() % f != 0 || weights.cols() == 0)
        throw std::invalid_argument(std::string(where) + ": weights " + dims(weights.rows(), weights.cols()) +
                                    " do not fit features " + dims(features.rows(), features.cols()));
    const auto n = weights.cols() / f;
    if (features.cols() == 0 || features.cols() % n != 0)
        throw std::invalid_argument(std::string(where) + ": features " + dims(features.rows(), features.cols()) +
                                    " are not a batch of " + std::to_string(n) + "-node maps");
    return {n, features.cols() / n};
}

using ConstBlockMap = Eigen::Map<const Matrix>;

}  // namespace

Matrix readout(const Matrix& weights, const Vector& bias, const Matrix& features) {
    const auto [n, batch] = readout_shape(weights, features, "readout");
    if (weights.rows() != bias.size())
        throw std::invalid_argument("readout: weights " + dims(weights.rows(), weights.cols()) + ", bias " +
                                    std::to_string(bias.size()));
    Matrix logits = bias.replicate(1, batch);
    for (Eigen::Index f = 0; f < features.rows(); ++f) {
        const ConstBlockMap block(features.row(f).data(), batch, n);
        logits.noalias() += weights.middleCols(f * n, n) * block.transpose();
    }
    return logits;
}

ReadoutGradients readout_backward(const Matrix& weights, const Matrix& features, const Matrix& d_logits) {
    const auto [n, batch] = readout_shape(weights, features, "readout_backward");
    if (d_logits.rows() != weights.rows() || d_logits.cols() != batch)
        throw std::invalid_argument("readout_backward: d_logits is " + dims(d_logits.rows(), d_logits.cols()) +
                                    ", expected " + dims(weights.rows(), batch));
    ReadoutGradients g;
    g.d_weights.resize(weights.rows(), weights.cols());
    g.d_bias = d_logits.rowwise().sum();
    g.d_features.resize(features.rows(), features.cols());
    for (Eigen::Index f = 0; f < features.rows(); ++f) {
        const ConstBlockMap block(features.row(f).data(), batch, n);
        g.d_weights.middleCols(f * n, n).noalias() = d_logits * block;
        Eigen::Map<Matrix>(g.d_features.row(f).data(), batch, n).noalias() =
            d_logits.transpose() * weights.middleCols(f * n, n);
    }
    return g;
}

Vector softmax(const Vector& logits) {
    const Vector shifted = (logits.array() - logits.maxCoeff()).exp();
    return shifted / shifted.sum();
}

LossResult softmax_cross_entropy(const Vector& logits, std::size_t label) {
    if (label >= static_cast<std::size_t>(logits.size()))
        throw std::invalid_argument("softmax_cross_entropy: label " + std::to_string(label) + " out of range [0, " +
                                    std::to_string(logits.size()) + ")");
    const double max = logits.maxCoeff();
    const double log_sum = std::log((logits.array() - max).exp().sum()) + max;
    LossResult r;
    r.loss = log_sum - logits(static_cast<Eigen::Index>(label));
    r.d_logits = (logits.array() - log_sum).exp();
    r.d_logits(static_cast<Eigen::Index>(label)) -= 1.0;
    return r;
}

ForwardTrace network_forward(const Network& net, const Matrix& x, Mode mode, Rng* rng) {
    const auto& spec = net.spec();
    const auto n = static_cast<Eigen::Index>(spec.nodes);
    if (static_cast<std::size_t>(x.rows()) != spec.input_features || x.cols() == 0 || x.cols() % n != 0)
        throw std::invalid_argument("network_forward: input is " + dims(x.rows(), x.cols()) + ", expected " +
                                    std::to_string(spec.input_features) + " rows and a multiple of " +
                                    std::to_string(n) + " columns");
    ForwardTrace t;
    t.mode = mode;
    t.batch = static_cast<std::size_t>(x.cols() / n);
    Matrix normalized;
    if (spec.normalize_input) {
        normalized = x;
        for (std::size_t b = 0; b < t.batch; ++b) {
            auto block = normalized.middleCols(static_cast<Eigen::Index>(b) * n, n);
            const double norm = block.norm();
            if (norm > 0.0) block /= norm;
        }
    }
    const Matrix* current = spec.normalize_input ? &normalized : &x;
    for (std::size_t l = 0; l < net.num_layers(); ++l) {
        t.inputs.push_back(*current);
        t.pre_activations.push_back(mimo_forward(net.layer(l), net.gso(), *current));
        if (spec.conv_bias) {
            const Vector& b = net.layer_bias(l);
            auto& pre = t.pre_activations.back();
            if (b.size() == 1)
                pre.array() += b(0);
            else
                pre.colwise() += b;
        }
        t.activations.push_back(relu(t.pre_activations.back()));
        current = &t.activations.back();
    }
    auto dropped = dropout(*current, spec.keep_prob, mode, rng);
    t.features = std::move(dropped.y);
    t.dropout_mask = std::move(dropped.mask);
    t.logits = readout(net.readout_weights(), net.readout_bias(), t.features);
    return t;
}

NetworkGradients NetworkGradients::zeros_like(const Network& net) {
    NetworkGradients g;
    for (std::size_t l = 0; l < net.num_layers(); ++l)
        g.d_taps.push_back(Matrix::Zero(net.layer(l).taps().rows(), net.layer(l).taps().cols()));
    if (net.spec().conv_bias)
        for (std::size_t l = 0; l < net.num_layers(); ++l) g.d_conv_bias.push_back(Vector::Zero(net.layer_bias(l).size()));
    g.d_readout_weights = Matrix::Zero(net.readout_weights().rows(), net.readout_weights().cols());
    g.d_readout_bias = Vector::Zero(net.readout_bias().size());
    return g;
}

std::vector<std::span<double>> NetworkGradients::tensors() {
    std::vector<std::span<double>> out;
    for (auto& d : d_taps) out.push_back(span_of(d));
    for (auto& d : d_conv_bias) out.push_back(span_of(d));
    out.push_back(span_of(d_readout_weights));
    out.push_back(span_of(d_readout_bias));
    return out;
}

std::vector<std::span<const double>> NetworkGradients::tensors() const {
    std::vector<std::span<const double>> out;
    for (const auto& d : d_taps) out.push_back(span_of(d));
    for (const auto& d : d_conv_bias) out.push_back(span_of(d));
    out.push_back(span_of(d_readout_weights));
    out.push_back(span_of(d_readout_bias));
    return out;
}

NetworkGradients& NetworkGradients::operator+=(const NetworkGradients& other) {
    if (other.d_taps.size() != d_taps.size() || other.d_conv_bias.size() != d_conv_bias.size())
        throw std::invalid_argument("NetworkGradients: layer count mismatch");
    for (std::size_t l = 0; l < d_taps.size(); ++l) d_taps[l] += other.d_taps[l];
    for (std::size_t l = 0; l < d_conv_bias.size(); ++l) d_conv_bias[l] += other.d_conv_bias[l];
    d_readout_weights += other.d_readout_weights;
    d_readout_bias += other.d_readout_bias;
    return *this;
}

NetworkGradients& NetworkGradients::operator*=(double scale) {
    for (auto& d : d_taps) d *= scale;
    for (auto& d : d_conv_bias) d *= scale;
    d_readout_weights *= scale;
    d_readout_bias *= scale;
    return *this;
}

NetworkGradients network_backward(const Network& net, const ForwardTrace& trace, const Matrix& d_logits) {
    const auto layers = net.num_layers();
    if (trace.inputs.size() != layers || trace.pre_activations.size() != layers ||
        trace.features.size() != net.readout_weights().cols() * static_cast<Eigen::Index>(trace.batch) ||
        trace.dropout_mask.rows() != trace.features.rows() || trace.dropout_mask.cols() != trace.features.cols())
        throw std::invalid_argument("network_backward: trace does not match the network");
    for (std::size_t l = 0; l < layers; ++l) {
        if (static_cast<std::size_t>(trace.pre_activations[l].rows()) != net.layer(l).p_out() ||
            static_cast<std::size_t>(trace.inputs[l].rows()) != net.layer(l).q_in())
            throw std::invalid_argument("network_backward: trace layer " + std::to_string(l) +
                                        " does not match the network");
    }
    if (d_logits.rows() != net.readout_weights().rows() || d_logits.cols() != static_cast<Eigen::Index>(trace.batch))
        throw std::invalid_argument("network_backward: d_logits is " + dims(d_logits.rows(), d_logits.cols()) +
                                    ", expected " + dims(net.readout_weights().rows(),
                                                         static_cast<Eigen::Index>(trace.batch)));

    NetworkGradients g;
    g.d_taps.resize(layers);
    if (net.spec().conv_bias) g.d_conv_bias.resize(layers);
    auto ro = readout_backward(net.readout_weights(), trace.features, d_logits);
    g.d_readout_weights = std::move(ro.d_weights);
    g.d_readout_bias = std::move(ro.d_bias);
    Matrix d_current = ro.d_features.cwiseProduct(trace.dropout_mask);
    for (std::size_t l = layers; l-- > 0;) {
        const Matrix d_pre = relu_backward(trace.pre_activations[l], d_current);
        if (net.spec().conv_bias) {
            if (net.layer_bias(l).size() == 1)
                g.d_conv_bias[l] = Vector::Constant(1, d_pre.sum());
            else
                g.d_conv_bias[l] = d_pre.rowwise().sum();
        }
        auto fg = mimo_backward(net.layer(l), net.gso(), trace.inputs[l], d_pre);
        g.d_taps[l] = std::move(fg.d_taps);
        d_current = std::move(fg.d_input);
    }
    return g;
}

std::size_t argmax(const Vector& logits) {
    Eigen::Index best = 0;
    for (Eigen::Index i = 1; i < logits.size(); ++i)
        if (logits(i) > logits(best)) best = i;
    return static_cast<std::size_t>(best);
}

std::size_t predict(const Network& net, const Matrix& x) {
    if (x.cols() != static_cast<Eigen::Index>(net.spec().nodes))
        throw std::invalid_argument("predict: expected a single " + std::to_string(net.spec().nodes) +
                                    "-node signal, got " + std::to_string(x.cols()) + " columns");
    return predict_batch(net, x).front();
}

std::vector<std::size_t> predict_batch(const Network& net, const Matrix& x) {
    const Matrix logits = network_forward(net, x, Mode::Eval, nullptr).logits;
    std::vector<std::size_t> out;
    out.reserve(static_cast<std::size_t>(logits.cols()));
    for (Eigen::Index b = 0; b < logits.cols(); ++b) out.push_back(argmax(logits.col(b)));
    return out;
}

void write_network(std::ostream& out, const Network& net) {
    const auto& spec = net.spec();
    out << "mimo-network 1\n";
    out << "nodes " << spec.nodes << '\n';
    out << "input_features " << spec.input_features << '\n';
    out << "classes " << spec.classes << '\n';
    out << "keep_prob " << format_double(spec.keep_prob) << '\n';
    out << "conv_bias " << (spec.conv_bias ? 1 : 0) << '\n';
    out << "normalize_input " << (spec.normalize_input ? 1 : 0) << '\n';
    out << "layers " << spec.layers.size() << '\n';
    for (const auto& l : spec.layers) out << "layer " << to_string(l.structure) << ' ' << l.p_out << ' ' << l.k_taps << '\n';
    const auto& s = net.gso();
    out << "gso " << to_string(s.kind()) << ' ' << s.size() << ' ' << s.nonzeros() << '\n';
    for (std::size_t i = 0; i < s.size(); ++i)
        for (std::size_t p = s.row_ptr()[i]; p < s.row_ptr()[i + 1]; ++p)
            out << i << ' ' << s.col_idx()[p] << ' ' << format_double(s.values()[p]) << '\n';
    for (std::size_t l = 0; l < net.num_layers(); ++l) write_filter(out, net.layer(l));
    if (spec.conv_bias)
        for (std::size_t l = 0; l < net.num_layers(); ++l) {
            const auto& b = net.layer_bias(l);
            out << "conv_bias " << l << ' ' << b.size() << '\n';
            for (Eigen::Index i = 0; i < b.size(); ++i) out << format_double(b(i)) << '\n';
        }
    const auto& w = net.readout_weights();
    out << "readout " << w.rows() << ' ' << w.cols() << '\n';
    for (Eigen::Index i = 0; i < w.size(); ++i) out << format_double(w.data()[i]) << '\n';
    const auto& b = net.readout_bias();
    out << "bias " << b.size() << '\n';
    for (Eigen::Index i = 0; i < b.size(); ++i) out << format_double(b(i)) << '\n';
}

namespace {

std::string next_line(std::istream& in, const char* what) {
    std::string line;
    if (!std::getline(in, line)) throw std::runtime_error(std::string("network checkpoint: missing ") + what);
    return line;
}

std::vector<std::string> expect_fields(std::istream& in, const char* keyword, std::size_t count) {
    const auto line = next_line(in, keyword);
    auto fields = split(trim(line), ' ');
    if (fields.size() != count || fields[0] != keyword)
        throw std::runtime_error(std::string("network checkpoint: expected '") + keyword + "' line, got '" + line + "'");
    return fields;
}

std::size_t as_size(const std::string& text) {
    const auto v = parse_int(text);
    if (v < 0) throw std::runtime_error("network checkpoint: negative count '" + text + "'");
    return static_cast<std::size_t>(v);
}

bool as_flag(const std::string& text) {
    if (text == "0") return false;
    if (text == "1") return true;
    throw std::runtime_error("network checkpoint: expected 0 or 1, got '" + text + "'");
}

}  // namespace

Network read_network(std::istream& in) {
    if (trim(next_line(in, "magic")) != "mimo-network 1")
        throw std::runtime_error("network checkpoint: bad magic/version line");
    NetworkSpec spec;
    spec.nodes = as_size(expect_fields(in, "nodes", 2)[1]);
    spec.input_features = as_size(expect_fields(in, "input_features", 2)[1]);
    spec.classes = as_size(expect_fields(in, "classes", 2)[1]);
    spec.keep_prob = parse_double(expect_fields(in, "keep_prob", 2)[1]);
    spec.conv_bias = as_flag(expect_fields(in, "conv_bias", 2)[1]);
    spec.normalize_input = as_flag(expect_fields(in, "normalize_input", 2)[1]);
    const auto layer_count = as_size(expect_fields(in, "layers", 2)[1]);
    for (std::size_t l = 0; l < layer_count; ++l) {
        const auto f = expect_fields(in, "layer", 4);
        spec.layers.push_back({parse_structure(f[1]), as_size(f[2]), as_size(f[3])});
    }
    const auto g = expect_fields(in, "gso", 4);
    const auto n = as_size(g[2]);
    const auto nnz = as_size(g[3]);
    std::vector<std::tuple<std::size_t, std::size_t, double>> triplets;
    for (std::size_t e = 0; e < nnz; ++e) {
        const auto f = split(trim(next_line(in, "gso entry")), ' ');
        if (f.size() != 3) throw std::runtime_error("network checkpoint: malformed gso entry");
        triplets.emplace_back(as_size(f[0]), as_size(f[1]), parse_double(f[2]));
    }
    Network net(spec, Gso::from_triplets(n, parse_gso_kind(g[1]), std::move(triplets)));
    for (std::size_t l = 0; l < layer_count; ++l) {
        auto params = read_filter(in);
        const auto& expected = net.layer(l);
        if (params.structure() != expected.structure() || params.p_out() != expected.p_out() ||
            params.q_in() != expected.q_in() || params.k_taps() != expected.k_taps())
            throw std::runtime_error("network checkpoint: filter block " + std::to_string(l) +
                                     " disagrees with the manifest");
        net.layer(l) = std::move(params);
    }
    if (spec.conv_bias)
        for (std::size_t l = 0; l < layer_count; ++l) {
            const auto f = expect_fields(in, "conv_bias", 3);
            auto& b = net.layer_bias(l);
            if (as_size(f[1]) != l || as_size(f[2]) != static_cast<std::size_t>(b.size()))
                throw std::runtime_error("network checkpoint: conv bias block " + std::to_string(l) +
                                         " disagrees with the manifest");
            for (Eigen::Index i = 0; i < b.size(); ++i) b(i) = parse_double(next_line(in, "conv bias value"));
        }
    const auto r = expect_fields(in, "readout", 3);
    auto& w = net.readout_weights();
    if (as_size(r[1]) != static_cast<std::size_t>(w.rows()) || as_size(r[2]) != static_cast<std::size_t>(w.cols()))
        throw std::runtime_error("network checkpoint: readout shape disagrees with the manifest");
    for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = parse_double(next_line(in, "readout value"));
    const auto b = expect_fields(in, "bias", 2);
    auto& bias = net.readout_bias();
    if (as_size(b[1]) != static_cast<std::size_t>(bias.size()))
        throw std::runtime_error("network checkpoint: bias length disagrees with the manifest");
    for (Eigen::Index i = 0; i < bias.size(); ++i) bias(i) = parse_double(next_line(in, "bias value"));
    return net;
}

void save_network(const Network& net, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open '" + path + "' for writing");
    write_network(out, net);
    if (!out) throw std::runtime_error("write failed for '" + path + "'");
}

Network load_network(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open '" + path + "' for reading");
    return read_network(in);
}

}  // namespace mimo
