#include "muscl/nets.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace muscl::nets {

std::size_t ParamSet::add(std::string name, Tensor t) {
    names.push_back(std::move(name));
    values.push_back(std::move(t));
    return values.size() - 1;
}

std::size_t ParamSet::total_size() const {
    std::size_t n = 0;
    for (const auto& t : values) n += t.size();
    return n;
}

const Tensor& ParamSet::get(const std::string& name) const {
    for (std::size_t i = 0; i < names.size(); ++i)
        if (names[i] == name) return values[i];
    throw std::out_of_range("ParamSet: no parameter named '" + name + "'");
}

double dot(const Grads& a, const Grads& b) {
    if (a.size() != b.size()) throw std::invalid_argument("Grads dot: size mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (!a[i].same_shape(b[i])) throw std::invalid_argument("Grads dot: shape mismatch");
        for (std::size_t j = 0; j < a[i].size(); ++j) s += a[i][j] * b[i][j];
    }
    return s;
}

void axpy(ParamSet& p, double a, const Grads& g) {
    if (p.values.size() != g.size()) throw std::invalid_argument("axpy: size mismatch");
    for (std::size_t i = 0; i < g.size(); ++i)
        for (std::size_t j = 0; j < g[i].size(); ++j) p.values[i][j] += a * g[i][j];
}

void axpy(Grads& acc, double a, const Grads& g) {
    if (acc.size() != g.size()) throw std::invalid_argument("axpy: size mismatch");
    for (std::size_t i = 0; i < g.size(); ++i)
        for (std::size_t j = 0; j < g[i].size(); ++j) acc[i][j] += a * g[i][j];
}

Grads zeros_like(const ParamSet& p) {
    Grads g;
    g.reserve(p.values.size());
    for (const auto& t : p.values) g.push_back(Tensor(t.shape()));
    return g;
}

std::string ArchConfig::serialize() const {
    std::ostringstream os;
    os << "conv_channels=";
    for (std::size_t i = 0; i < conv_channels.size(); ++i) os << (i ? "," : "") << conv_channels[i];
    os << ";repr_dim=" << repr_dim << ";proj_dim=" << proj_dim
       << ";weightnet_hidden=" << weightnet_hidden;
    return os.str();
}

ArchConfig ArchConfig::deserialize(const std::string& text) {
    ArchConfig a;
    a.conv_channels.clear();
    std::istringstream is(text);
    std::string field;
    while (std::getline(is, field, ';')) {
        auto eq = field.find('=');
        if (eq == std::string::npos) throw std::runtime_error("ArchConfig: bad field '" + field + "'");
        std::string key = field.substr(0, eq), val = field.substr(eq + 1);
        if (key == "conv_channels") {
            std::istringstream vs(val);
            std::string tok;
            while (std::getline(vs, tok, ','))
                if (!tok.empty()) a.conv_channels.push_back(std::stoul(tok));
        } else if (key == "repr_dim") {
            a.repr_dim = std::stoul(val);
        } else if (key == "proj_dim") {
            a.proj_dim = std::stoul(val);
        } else if (key == "weightnet_hidden") {
            a.weightnet_hidden = std::stoul(val);
        } else {
            throw std::runtime_error("ArchConfig: unknown field '" + key + "'");
        }
    }
    return a;
}

namespace {

Tensor he_init(std::vector<std::size_t> shape, std::size_t fan_in, Rng& rng) {
    Tensor t(std::move(shape));
    double std = std::sqrt(2.0 / static_cast<double>(fan_in));
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = std * rng.normal();
    return t;
}

}  // namespace

std::pair<ModelParams, WeightNetParams> init_params(const ArchConfig& arch, Rng& rng) {
    ModelParams m;
    m.arch = arch;
    std::size_t cin = 1;
    for (std::size_t i = 0; i < arch.conv_channels.size(); ++i) {
        std::size_t cout = arch.conv_channels[i];
        m.params.add("conv" + std::to_string(i) + ".w", he_init({cout, cin, 3, 3}, cin * 9, rng));
        m.params.add("conv" + std::to_string(i) + ".b", Tensor({cout}));
        cin = cout;
    }
    m.params.add("head.w", he_init({arch.repr_dim, cin}, cin, rng));
    m.params.add("head.b", Tensor({arch.repr_dim}));
    m.params.add("proj.w1", he_init({arch.repr_dim, arch.repr_dim}, arch.repr_dim, rng));
    m.params.add("proj.b1", Tensor({arch.repr_dim}));
    m.params.add("proj.w2", he_init({arch.proj_dim, arch.repr_dim}, arch.repr_dim, rng));
    m.params.add("proj.b2", Tensor({arch.proj_dim}));

    WeightNetParams w;
    w.repr_dim = arch.repr_dim;
    w.hidden = arch.weightnet_hidden;
    w.params.add("w1", he_init({arch.weightnet_hidden, 2 * arch.repr_dim}, 2 * arch.repr_dim, rng));
    w.params.add("b1", Tensor({arch.weightnet_hidden}));
    w.params.add("w2", Tensor({1, arch.weightnet_hidden}));  // zero: initial weights exactly 0.5
    w.params.add("b2", Tensor({1}));
    return {std::move(m), std::move(w)};
}

std::vector<Var> attach(Tape& tape, const ParamSet& p) {
    std::vector<Var> vars;
    vars.reserve(p.values.size());
    for (const auto& t : p.values) vars.push_back(tape.leaf(t));
    return vars;
}

std::vector<Var> attach_const(Tape& tape, const ParamSet& p) {
    std::vector<Var> vars;
    vars.reserve(p.values.size());
    for (const auto& t : p.values) vars.push_back(tape.constant(t));
    return vars;
}

Tensor image_to_tensor(const synth::Image& img) {
    return Tensor({1, img.height, img.width}, img.pixels);
}

Var conv_pooled(Tape& tape, const ArchConfig& arch, const std::vector<Var>& mp,
                const Tensor& img) {
    if (img.rank() != 3)
        throw std::invalid_argument("encode_image: expected [1,H,W], got " + shape_str(img.shape()));
    std::size_t min_dim = arch.min_image_dim();
    if (img.shape()[1] < min_dim || img.shape()[2] < min_dim)
        throw std::invalid_argument("encode_image: image " + shape_str(img.shape()) +
                                    " too small for the conv/pool stack; minimum is " +
                                    std::to_string(min_dim) + "x" + std::to_string(min_dim));
    Var x = tape.constant(img);
    for (std::size_t i = 0; i < arch.conv_channels.size(); ++i) {
        x = pad2d(x, 1);
        x = conv2d(x, mp[2 * i], mp[2 * i + 1]);
        x = relu(x);
        x = mean_pool2(x);
    }
    return global_mean_pool(x);
}

Var encode_image(Tape& tape, const ArchConfig& arch, const std::vector<Var>& mp,
                 const Tensor& img) {
    Var pooled = conv_pooled(tape, arch, mp, img);
    std::size_t n_conv = arch.conv_channels.size();
    return add(matvec(mp[2 * n_conv], pooled), mp[2 * n_conv + 1]);
}

Var encode_batch(Tape& tape, const ArchConfig& arch, const std::vector<Var>& mp,
                 const std::vector<Tensor>& images) {
    if (images.empty()) throw std::invalid_argument("encode_batch: no images");
    for (const Tensor& img : images)
        if (!img.same_shape(images[0]))
            throw std::invalid_argument("encode_batch: mixed image shapes " +
                                        shape_str(images[0].shape()) + " vs " +
                                        shape_str(img.shape()));
    std::vector<Var> rows;
    rows.reserve(images.size());
    for (const Tensor& img : images) rows.push_back(encode_image(tape, arch, mp, img));
    return stack_rows(rows);
}

Var project(Tape& tape, const ArchConfig& arch, const std::vector<Var>& mp, Var H) {
    (void)tape;
    const Tensor& hv = H.value();
    if (hv.rank() != 2 || hv.shape()[1] != arch.repr_dim)
        throw std::invalid_argument("project: H of shape " + shape_str(hv.shape()) +
                                    " does not match repr_dim " + std::to_string(arch.repr_dim));
    std::size_t base = 2 * arch.conv_channels.size() + 2;
    Var a = relu(add_rowvec(matmul_nt(H, mp[base]), mp[base + 1]));
    return add_rowvec(matmul_nt(a, mp[base + 2]), mp[base + 3]);
}

Var weigh(Tape& tape, const WeightNetParams& arch_ref, const std::vector<Var>& wp, Var h1, Var h2) {
    (void)tape;
    if (h1.value().size() != arch_ref.repr_dim || h2.value().size() != arch_ref.repr_dim)
        throw std::invalid_argument("weigh: inputs " + shape_str(h1.value().shape()) + "/" +
                                    shape_str(h2.value().shape()) + " do not match repr_dim " +
                                    std::to_string(arch_ref.repr_dim));
    Var feat = concat({add(h1, h2), abs_op(sub(h1, h2))});
    Var u = relu(add(matvec(wp[0], feat), wp[1]));
    Var logit = add(matvec(wp[2], u), wp[3]);
    return sigmoid(element(logit, 0));
}

Tensor encode_images_value(const ModelParams& m, const std::vector<Tensor>& images) {
    Tape tape;
    auto mp = attach_const(tape, m.params);
    Var H = encode_batch(tape, m.arch, mp, images);
    return H.value();
}

Tensor pooled_features_value(const ModelParams& m, const std::vector<Tensor>& images) {
    Tape tape;
    auto mp = attach_const(tape, m.params);
    std::vector<Var> rows;
    rows.reserve(images.size());
    for (const Tensor& img : images) rows.push_back(conv_pooled(tape, m.arch, mp, img));
    return stack_rows(rows).value();
}

double weigh_value(const WeightNetParams& w, const Tensor& h1, const Tensor& h2) {
    Tape tape;
    auto wp = attach_const(tape, w.params);
    Var w_out = weigh(tape, w, wp, tape.constant(h1), tape.constant(h2));
    return w_out.value().item();
}

}  // namespace muscl::nets
