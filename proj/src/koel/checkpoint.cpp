#include "koel/checkpoint.hpp"

#include <algorithm>
#include <cstdint>
#include <fstream>

#include "koel/common.hpp"

namespace koel {

namespace {

constexpr char kMagic[8] = {'K', 'O', 'E', 'L', 'C', 'K', 'P', '1'};

void put_i64(std::ostream &os, int64_t v) {
    os.write(reinterpret_cast<const char *>(&v), sizeof v);
}

void put_f64(std::ostream &os, double v) {
    os.write(reinterpret_cast<const char *>(&v), sizeof v);
}

void put_str(std::ostream &os, const std::string &s) {
    put_i64(os, static_cast<int64_t>(s.size()));
    os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

void put_f64s(std::ostream &os, const std::vector<double> &v) {
    put_i64(os, static_cast<int64_t>(v.size()));
    os.write(reinterpret_cast<const char *>(v.data()),
             static_cast<std::streamsize>(v.size() * sizeof(double)));
}

void put_f32s(std::ostream &os, const std::vector<float> &v) {
    put_i64(os, static_cast<int64_t>(v.size()));
    os.write(reinterpret_cast<const char *>(v.data()),
             static_cast<std::streamsize>(v.size() * sizeof(float)));
}

int64_t get_i64(std::istream &is) {
    int64_t v = 0;
    is.read(reinterpret_cast<char *>(&v), sizeof v);
    check(is.good(), "checkpoint: truncated file (int)");
    return v;
}

double get_f64(std::istream &is) {
    double v = 0;
    is.read(reinterpret_cast<char *>(&v), sizeof v);
    check(is.good(), "checkpoint: truncated file (double)");
    return v;
}

std::string get_str(std::istream &is) {
    int64_t n = get_i64(is);
    check(n >= 0 && n < (1 << 20), "checkpoint: implausible string length ", n);
    std::string s(static_cast<size_t>(n), '\0');
    is.read(s.data(), n);
    check(is.good(), "checkpoint: truncated file (string)");
    return s;
}

std::vector<double> get_f64s(std::istream &is) {
    int64_t n = get_i64(is);
    check(n >= 0, "checkpoint: negative vector length");
    std::vector<double> v(static_cast<size_t>(n));
    is.read(reinterpret_cast<char *>(v.data()),
            static_cast<std::streamsize>(v.size() * sizeof(double)));
    check(is.good() || n == 0, "checkpoint: truncated file (doubles)");
    return v;
}

std::vector<float> get_f32s(std::istream &is) {
    int64_t n = get_i64(is);
    check(n >= 0, "checkpoint: negative vector length");
    std::vector<float> v(static_cast<size_t>(n));
    is.read(reinterpret_cast<char *>(v.data()),
            static_cast<std::streamsize>(v.size() * sizeof(float)));
    check(is.good() || n == 0, "checkpoint: truncated file (floats)");
    return v;
}

void put_config(std::ostream &os, const ModelConfig &c) {
    put_i64(os, c.encoder.n_mels);
    put_i64(os, c.encoder.d_model);
    put_i64(os, c.encoder.n_heads);
    put_i64(os, c.encoder.ffn_dim);
    put_i64(os, c.encoder.n_layers);
    put_i64(os, c.encoder.conv_kernel);
    put_f64(os, c.encoder.dropout);
    put_i64(os, c.encoder.conformer ? 1 : 0);
    put_i64(os, c.encoder.ctc_vocab);
    put_i64(os, c.grp_layers);
    put_i64(os, c.phn_layers);
    put_i64(os, c.grapheme_vocab);
    put_i64(os, c.phoneme_vocab);
    put_f64(os, c.weights.alpha);
    put_f64(os, c.weights.beta);
    put_f64(os, c.weights.gamma);
    put_f64(os, c.weights.pi);
}

ModelConfig get_config(std::istream &is) {
    ModelConfig c;
    c.encoder.n_mels = static_cast<int>(get_i64(is));
    c.encoder.d_model = static_cast<int>(get_i64(is));
    c.encoder.n_heads = static_cast<int>(get_i64(is));
    c.encoder.ffn_dim = static_cast<int>(get_i64(is));
    c.encoder.n_layers = static_cast<int>(get_i64(is));
    c.encoder.conv_kernel = static_cast<int>(get_i64(is));
    c.encoder.dropout = get_f64(is);
    c.encoder.conformer = get_i64(is) != 0;
    c.encoder.ctc_vocab = static_cast<int>(get_i64(is));
    c.grp_layers = static_cast<int>(get_i64(is));
    c.phn_layers = static_cast<int>(get_i64(is));
    c.grapheme_vocab = static_cast<int>(get_i64(is));
    c.phoneme_vocab = static_cast<int>(get_i64(is));
    c.weights.alpha = get_f64(is);
    c.weights.beta = get_f64(is);
    c.weights.gamma = get_f64(is);
    c.weights.pi = get_f64(is);
    return c;
}

}  // namespace

template <class S>
Checkpoint snapshot(Model<S> &model, const Cmvn &cmvn, const TrainerState *trainer) {
    Checkpoint ck;
    ck.config = model.config();
    for (auto &[name, tensor] : model.params()) {
        NamedTensor nt;
        nt.name = name;
        nt.shape = tensor.shape();
        nt.data.assign(tensor.data().begin(), tensor.data().end());
        ck.params.push_back(std::move(nt));
    }
    for (const BatchNormState *bn : model.batch_norm_states()) ck.bn_states.push_back(*bn);
    ck.cmvn = cmvn;
    if (trainer) {
        ck.has_trainer = true;
        ck.trainer = *trainer;
    }
    return ck;
}

template <class S>
void load_into(Model<S> &model, const Checkpoint &ck) {
    ParamMap<S> params = model.params();
    check(params.size() == ck.params.size(), "checkpoint: parameter count mismatch (model ",
          params.size(), ", file ", ck.params.size(), ")");
    for (size_t i = 0; i < params.size(); ++i) {
        auto &[name, tensor] = params[i];
        const NamedTensor &nt = ck.params[i];
        check(name == nt.name, "checkpoint: parameter ", i, " name mismatch: model '", name,
              "' vs file '", nt.name, "'");
        check(tensor.shape() == nt.shape, "checkpoint: shape mismatch for ", name);
        auto &dst = tensor.leaf_data();
        for (size_t k = 0; k < dst.size(); ++k) dst[k] = static_cast<S>(nt.data[k]);
    }
    std::vector<BatchNormState *> bns = model.batch_norm_states();
    check(bns.size() == ck.bn_states.size(), "checkpoint: batch-norm state count mismatch");
    for (size_t i = 0; i < bns.size(); ++i) *bns[i] = ck.bn_states[i];
}

void save_checkpoint(const std::string &path, const Checkpoint &ck) {
    std::ofstream os(path, std::ios::binary);
    check(os.good(), "checkpoint: cannot open ", path, " for writing");
    os.write(kMagic, sizeof kMagic);
    put_config(os, ck.config);

    put_i64(os, static_cast<int64_t>(ck.params.size()));
    for (const NamedTensor &nt : ck.params) {
        put_str(os, nt.name);
        put_i64(os, static_cast<int64_t>(nt.shape.size()));
        for (int d : nt.shape) put_i64(os, d);
        put_f64s(os, nt.data);
    }

    put_i64(os, static_cast<int64_t>(ck.bn_states.size()));
    for (const BatchNormState &bn : ck.bn_states) {
        put_f32s(os, bn.running_mean);
        put_f32s(os, bn.running_var);
    }

    put_f32s(os, ck.cmvn.mean);
    put_f32s(os, ck.cmvn.inv_std);

    put_i64(os, ck.has_trainer ? 1 : 0);
    if (ck.has_trainer) {
        const TrainerState &t = ck.trainer;
        put_i64(os, t.step);
        put_i64(os, t.epoch);
        put_f64(os, t.lr);
        put_f64(os, t.best_dev);
        put_i64(os, t.bad_epochs);
        put_i64(os, t.adam_t);
        put_i64(os, static_cast<int64_t>(t.adam_m.size()));
        for (const auto &m : t.adam_m) put_f64s(os, m);
        put_i64(os, static_cast<int64_t>(t.adam_v.size()));
        for (const auto &v : t.adam_v) put_f64s(os, v);
        put_str(os, t.rng_state);
    }
    check(os.good(), "checkpoint: write to ", path, " failed");
}

Checkpoint load_checkpoint(const std::string &path) {
    std::ifstream is(path, std::ios::binary);
    check(is.good(), "checkpoint: cannot open ", path);
    char magic[8];
    is.read(magic, sizeof magic);
    check(is.good() && std::equal(magic, magic + 8, kMagic), "checkpoint: ", path,
          " is not a checkpoint file");

    Checkpoint ck;
    ck.config = get_config(is);

    int64_t n_params = get_i64(is);
    check(n_params >= 0 && n_params < (1 << 20), "checkpoint: implausible param count");
    for (int64_t i = 0; i < n_params; ++i) {
        NamedTensor nt;
        nt.name = get_str(is);
        int64_t nd = get_i64(is);
        check(nd >= 0 && nd <= 8, "checkpoint: implausible rank ", nd);
        for (int64_t k = 0; k < nd; ++k) nt.shape.push_back(static_cast<int>(get_i64(is)));
        nt.data = get_f64s(is);
        ck.params.push_back(std::move(nt));
    }

    int64_t n_bn = get_i64(is);
    check(n_bn >= 0 && n_bn < (1 << 16), "checkpoint: implausible batch-norm count");
    for (int64_t i = 0; i < n_bn; ++i) {
        BatchNormState bn;
        bn.running_mean = get_f32s(is);
        bn.running_var = get_f32s(is);
        ck.bn_states.push_back(std::move(bn));
    }

    ck.cmvn.mean = get_f32s(is);
    ck.cmvn.inv_std = get_f32s(is);

    ck.has_trainer = get_i64(is) != 0;
    if (ck.has_trainer) {
        TrainerState &t = ck.trainer;
        t.step = get_i64(is);
        t.epoch = static_cast<int>(get_i64(is));
        t.lr = get_f64(is);
        t.best_dev = get_f64(is);
        t.bad_epochs = static_cast<int>(get_i64(is));
        t.adam_t = get_i64(is);
        int64_t nm = get_i64(is);
        check(nm >= 0 && nm < (1 << 20), "checkpoint: implausible moment count");
        for (int64_t i = 0; i < nm; ++i) t.adam_m.push_back(get_f64s(is));
        int64_t nv = get_i64(is);
        check(nv == nm, "checkpoint: Adam moment lists disagree");
        for (int64_t i = 0; i < nv; ++i) t.adam_v.push_back(get_f64s(is));
        t.rng_state = get_str(is);
    }
    return ck;
}

template Checkpoint snapshot<float>(Model<float> &, const Cmvn &, const TrainerState *);
template Checkpoint snapshot<double>(Model<double> &, const Cmvn &, const TrainerState *);
template void load_into<float>(Model<float> &, const Checkpoint &);
template void load_into<double>(Model<double> &, const Checkpoint &);

}  // namespace koel
