// koel command line: the full workflow from synthetic data to scores.
//
//   synth             generate a synthetic tone-language dataset + manifests
//   prepare-vocab     build grapheme/phoneme vocabularies from a manifest
//   extract-features  write log-mel feature caches for a manifest
//   lm-train          train the Witten-Bell n-gram LM on transcripts
//   train             train the dual-decoder model
//   decode            beam-search decode a manifest with a checkpoint
//   score             WER/CER/LID report from decode output
//   sweep             train/score one model per phoneme-decoder depth
//
// Every subcommand takes `--config FILE` (flat key=value lines) plus
// repeatable `--set key=value` overrides; flags document the file schema.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "koel/checkpoint.hpp"
#include "koel/configfile.hpp"
#include "koel/synth.hpp"
#include "koel/train.hpp"

namespace fs = std::filesystem;
using namespace koel;

namespace {

struct CommonOpts {
    std::string config_path;
    std::vector<std::string> overrides;
};

void add_common(CLI::App *cmd, CommonOpts *opts) {
    cmd->add_option("--config", opts->config_path, "flat key=value config file");
    cmd->add_option("--set", opts->overrides, "override, e.g. --set epochs=3 (repeatable)");
}

ConfigFile load_config(const CommonOpts &opts) {
    ConfigFile cfg =
        opts.config_path.empty() ? ConfigFile() : ConfigFile::load(opts.config_path);
    for (const std::string &kv : opts.overrides) cfg.apply_override(kv);
    return cfg;
}

std::vector<std::string> split_list(const std::string &text, char sep) {
    std::vector<std::string> out;
    std::string item;
    std::istringstream is(text);
    while (std::getline(is, item, sep))
        if (!item.empty()) out.push_back(item);
    return out;
}

std::vector<double> parse_doubles(const std::string &text, const char *what) {
    std::vector<double> out;
    for (const std::string &item : split_list(text, ',')) {
        try {
            size_t used = 0;
            out.push_back(std::stod(item, &used));
            check(used == item.size(), "trailing characters");
        } catch (const std::exception &) {
            fail("cannot parse ", what, " entry '", item, "' in '", text, "'");
        }
    }
    check(!out.empty(), what, " list is empty");
    return out;
}

std::vector<int> parse_ints(const std::string &text, const char *what) {
    std::vector<int> out;
    for (double v : parse_doubles(text, what)) {
        check(v == static_cast<double>(static_cast<int>(v)), what, " entry ", v,
              " is not an integer");
        out.push_back(static_cast<int>(v));
    }
    return out;
}

// "TE:abcde" or "TE:abcde:8000", comma-separated
std::vector<SynthLanguage> parse_languages(const std::string &text) {
    std::vector<SynthLanguage> out;
    for (const std::string &entry : split_list(text, ',')) {
        const std::vector<std::string> parts = split_list(entry, ':');
        check(parts.size() == 2 || parts.size() == 3, "language entry '", entry,
              "' is not name:alphabet or name:alphabet:rate");
        SynthLanguage lang;
        lang.name = parts[0];
        lang.alphabet = parts[1];
        if (parts.size() == 3) {
            try {
                lang.sample_rate = std::stoi(parts[2]);
            } catch (const std::exception &) {
                fail("bad sample rate in language entry '", entry, "'");
            }
        }
        out.push_back(std::move(lang));
    }
    check(!out.empty(), "no languages given");
    return out;
}

SynthSpec synth_spec_from(const ConfigFile &cfg) {
    SynthSpec spec;
    spec.languages = parse_languages(cfg.get_str(
        "languages", "TE:abcde,TA:fghij,GU:klmno,MA:pqrst,HI:uvwxy,OD:z1234"));
    spec.utterances_per_language = cfg.get_int("utts", 25);
    spec.min_words = cfg.get_int("min_words", 2);
    spec.max_words = cfg.get_int("max_words", 4);
    spec.min_word_len = cfg.get_int("min_word_len", 1);
    spec.max_word_len = cfg.get_int("max_word_len", 3);
    spec.seed = static_cast<uint64_t>(cfg.get_int("seed", 1));
    return spec;
}

TrainConfig train_config_from(const ConfigFile &cfg, const Vocabulary &graphemes,
                              const Vocabulary &phonemes) {
    TrainConfig tc;
    tc.model.encoder.n_mels = 40;
    tc.model.encoder.d_model = cfg.get_int("d_model", tc.model.encoder.d_model);
    tc.model.encoder.n_heads = cfg.get_int("n_heads", tc.model.encoder.n_heads);
    tc.model.encoder.ffn_dim = cfg.get_int("ffn_dim", tc.model.encoder.ffn_dim);
    tc.model.encoder.n_layers = cfg.get_int("enc_layers", tc.model.encoder.n_layers);
    tc.model.encoder.conv_kernel = cfg.get_int("conv_kernel", tc.model.encoder.conv_kernel);
    tc.model.encoder.dropout = cfg.get_double("dropout", tc.model.encoder.dropout);
    tc.model.encoder.conformer = cfg.get_bool("conformer", tc.model.encoder.conformer);
    tc.model.grp_layers = cfg.get_int("grp_layers", tc.model.grp_layers);
    tc.model.phn_layers = cfg.get_int("phn_layers", tc.model.phn_layers);
    tc.model.grapheme_vocab = graphemes.size();
    tc.model.phoneme_vocab = phonemes.size();
    tc.model.encoder.ctc_vocab = graphemes.size();
    tc.model.weights.alpha = cfg.get_double("alpha", tc.model.weights.alpha);
    tc.model.weights.beta = cfg.get_double("beta", tc.model.weights.beta);
    tc.model.weights.gamma = cfg.get_double("gamma", tc.model.weights.gamma);
    tc.model.weights.pi = cfg.get_double("pi", tc.model.weights.pi);
    tc.lr = cfg.get_double("lr", tc.lr);
    tc.adam_beta1 = cfg.get_double("adam_beta1", tc.adam_beta1);
    tc.adam_beta2 = cfg.get_double("adam_beta2", tc.adam_beta2);
    tc.adam_eps = cfg.get_double("adam_eps", tc.adam_eps);
    tc.clip_norm = cfg.get_double("clip_norm", tc.clip_norm);
    tc.plateau_factor = cfg.get_double("plateau_factor", tc.plateau_factor);
    tc.plateau_patience = cfg.get_int("plateau_patience", tc.plateau_patience);
    tc.epochs = cfg.get_int("epochs", tc.epochs);
    tc.batch_size = cfg.get_int("batch_size", tc.batch_size);
    tc.seed = static_cast<uint64_t>(cfg.get_int("seed", 1));
    tc.augment = cfg.get_bool("augment", tc.augment);
    if (cfg.has("speed_factors"))
        tc.speed_factors = parse_doubles(cfg.get_str("speed_factors", ""), "speed_factors");
    tc.augment_policy.num_freq_masks = cfg.get_int("spec_freq_masks", tc.augment_policy.num_freq_masks);
    tc.augment_policy.max_freq_width =
        cfg.get_int("spec_freq_width", tc.augment_policy.max_freq_width);
    tc.augment_policy.num_time_masks = cfg.get_int("spec_time_masks", tc.augment_policy.num_time_masks);
    tc.augment_policy.max_time_width =
        cfg.get_int("spec_time_width", tc.augment_policy.max_time_width);
    tc.validate();
    return tc;
}

struct Vocabs {
    Vocabulary graphemes, phonemes;
};

Vocabs load_vocabs(const std::string &dir) {
    Vocabs v;
    v.graphemes = Vocabulary::load((fs::path(dir) / "graphemes.txt").string(),
                                   Vocabulary::Kind::grapheme);
    v.phonemes =
        Vocabulary::load((fs::path(dir) / "phonemes.txt").string(), Vocabulary::Kind::phoneme);
    return v;
}

int run_synth(const CommonOpts &common, const std::string &out_dir) {
    const ConfigFile cfg = load_config(common);
    SynthSpec spec = synth_spec_from(cfg);
    const int test_utts = cfg.get_int("test_utts", 0);
    check(test_utts >= 0, "test_utts must be >= 0");
    const int train_utts = spec.utterances_per_language;
    spec.utterances_per_language += test_utts;

    const std::vector<UtteranceMeta> rows = generate_synthetic_dataset(spec, out_dir);
    if (test_utts == 0) {
        write_manifest((fs::path(out_dir) / "manifest.jsonl").string(), rows);
        std::cout << "wrote " << rows.size() << " utterances and manifest.jsonl to " << out_dir
                  << "\n";
        return 0;
    }
    // rows come out grouped by language; the per-language head (which starts
    // with the coverage utterance) trains, the tail tests
    std::vector<UtteranceMeta> train_rows, test_rows;
    for (size_t lang = 0; lang < spec.languages.size(); ++lang) {
        const size_t base = lang * static_cast<size_t>(spec.utterances_per_language);
        for (int u = 0; u < spec.utterances_per_language; ++u) {
            const UtteranceMeta &row = rows[base + static_cast<size_t>(u)];
            (u < train_utts ? train_rows : test_rows).push_back(row);
        }
    }
    write_manifest((fs::path(out_dir) / "train.jsonl").string(), train_rows);
    write_manifest((fs::path(out_dir) / "test.jsonl").string(), test_rows);
    std::cout << "wrote " << train_rows.size() << " train + " << test_rows.size()
              << " test utterances to " << out_dir << "\n";
    return 0;
}

int run_prepare_vocab(const std::string &train_path, const std::string &out_dir) {
    const std::vector<UtteranceMeta> rows = read_manifest(train_path);
    const Vocabulary graphemes = build_graphemes_from_manifest(rows);
    const Vocabulary phonemes = build_phonemes_from_manifest(rows);
    fs::create_directories(out_dir);
    graphemes.save((fs::path(out_dir) / "graphemes.txt").string());
    phonemes.save((fs::path(out_dir) / "phonemes.txt").string());
    std::cout << "graphemes: " << graphemes.size() << " symbols\nphonemes: " << phonemes.size()
              << " symbols\n";
    return 0;
}

int run_extract_features(const std::string &manifest_path, const std::string &out_dir) {
    const std::vector<UtteranceMeta> rows = read_manifest(manifest_path);
    fs::create_directories(out_dir);
    std::vector<std::string> errors(rows.size());
#pragma omp parallel for schedule(dynamic)
    for (int64_t i = 0; i < static_cast<int64_t>(rows.size()); ++i) {
        try {
            const UtteranceMeta &row = rows[static_cast<size_t>(i)];
            Waveform w = resample(read_wav(row.audio_path), FbankConfig{}.sample_rate);
            FeatureSequence f = compute_fbank(w);
            f.utt_id = row.utt_id;
            f.language = row.language;
            write_feature_cache((fs::path(out_dir) / (row.utt_id + ".feat")).string(), f);
        } catch (const std::exception &e) {
            errors[static_cast<size_t>(i)] = e.what();
        }
    }
    for (const std::string &err : errors)
        if (!err.empty()) fail("extract-features: ", err);
    std::cout << "wrote " << rows.size() << " feature caches to " << out_dir << "\n";
    return 0;
}

int run_lm_train(const CommonOpts &common, const std::string &train_path,
                 const std::string &out_path) {
    const ConfigFile cfg = load_config(common);
    const int order = cfg.get_int("lm_order", 3);
    const std::vector<UtteranceMeta> rows = read_manifest(train_path);
    const NGramLM lm = NGramLM::train(lm_corpus(rows), order);
    lm.save(out_path);
    std::cout << "trained " << order << "-gram on " << rows.size() << " utterances -> "
              << out_path << "\n";
    return 0;
}

int run_train(const CommonOpts &common, const std::string &train_path,
              const std::string &dev_path, const std::string &vocab_dir,
              const std::string &out_dir, const std::string &resume_path) {
    const ConfigFile cfg = load_config(common);
    const Vocabs v = load_vocabs(vocab_dir);
    const TrainConfig tc = train_config_from(cfg, v.graphemes, v.phonemes);

    Trainer<float> trainer(tc, v.graphemes, v.phonemes);
    trainer.set_data(read_manifest(train_path),
                     dev_path.empty() ? read_manifest(train_path) : read_manifest(dev_path));
    if (!resume_path.empty()) trainer.restore(load_checkpoint(resume_path));

    fs::create_directories(out_dir);
    std::ofstream metrics(fs::path(out_dir) / "metrics.jsonl",
                          resume_path.empty() ? std::ios::trunc : std::ios::app);
    check(metrics.good(), "cannot write metrics log in ", out_dir);
    trainer.fit(&metrics, out_dir, &std::cout);
    std::cout << "done: " << trainer.state().step << " steps, best dev loss "
              << trainer.state().best_dev << "; checkpoints in " << out_dir << "\n";
    return 0;
}

int run_decode(const CommonOpts &common, const std::string &manifest_path,
               const std::string &ckpt_path, const std::string &vocab_dir,
               const std::string &lm_path, const std::string &out_path) {
    const ConfigFile cfg = load_config(common);
    check(fs::exists(ckpt_path), "checkpoint not found: ", ckpt_path,
          " (train first, or pass --checkpoint)");
    const Checkpoint ck = load_checkpoint(ckpt_path);
    const Vocabs v = load_vocabs(vocab_dir);
    check(ck.config.grapheme_vocab == v.graphemes.size(),
          "checkpoint grapheme vocab (", ck.config.grapheme_vocab,
          ") does not match ", vocab_dir, " (", v.graphemes.size(), ")");

    Rng rng(0);
    Model<float> model(ck.config, rng);
    load_into(model, ck);

    NGramLM lm;
    const bool use_lm = !lm_path.empty();
    if (use_lm) lm = NGramLM::load(lm_path);

    BeamConfig beam;
    beam.beam_size = cfg.get_int("beam_size", beam.beam_size);
    beam.lm_lambda = cfg.get_double("lm_lambda", beam.lm_lambda);

    const std::vector<UtteranceMeta> rows = read_manifest(manifest_path);
    std::vector<DecodeResult> details;
    const std::vector<ScoredUtterance> scored =
        decode_manifest(model, ck.cmvn, rows, v.graphemes, v.phonemes,
                        use_lm ? &lm : nullptr, beam, &details);

    std::ofstream os(out_path, std::ios::trunc);
    check(os.good(), "cannot write ", out_path);
    for (size_t i = 0; i < scored.size(); ++i) {
        const Hypothesis &top = details[i].nbest.front();
        nlohmann::json j{{"utt_id", scored[i].utt_id},
                         {"language", scored[i].language},
                         {"ref", scored[i].ref},
                         {"hyp", scored[i].hyp},
                         {"lid", details[i].lid_class},
                         {"lid_language", language_names()[static_cast<size_t>(
                                              details[i].lid_class)]},
                         {"greedy", details[i].greedy_text},
                         {"log_p_ctc", top.log_p_ctc},
                         {"log_p_lm", top.log_p_lm},
                         {"fused", top.fused}};
        os << j.dump() << "\n";
    }
    check(os.good(), "short write to ", out_path);
    std::cout << "decoded " << scored.size() << " utterances -> " << out_path << "\n";
    return 0;
}

int run_score(const std::string &hyps_path, bool as_json) {
    std::ifstream is(hyps_path);
    check(is.good(), "cannot open ", hyps_path);
    std::vector<ScoredUtterance> scored;
    int lid_hits = 0, lid_total = 0;
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const std::exception &e) {
            fail(hyps_path, " line ", lineno, ": ", e.what());
        }
        ScoredUtterance s;
        s.utt_id = j.value("utt_id", "");
        s.language = j.value("language", "");
        s.ref = j.at("ref").get<std::string>();
        s.hyp = j.at("hyp").get<std::string>();
        if (!s.language.empty() && j.contains("lid_language")) {
            ++lid_total;
            if (j.at("lid_language").get<std::string>() == s.language) ++lid_hits;
        }
        scored.push_back(std::move(s));
    }
    check(!scored.empty(), "no utterances in ", hyps_path);

    const ScoreReport report = score_utterances(scored);
    const double lid_acc =
        lid_total > 0 ? static_cast<double>(lid_hits) / lid_total : 0.0;
    if (as_json) {
        nlohmann::json j = nlohmann::json::parse(report.to_json());
        j["lid_accuracy"] = lid_acc;
        j["lid_scored"] = lid_total;
        std::cout << j.dump(2) << "\n";
    } else {
        std::cout << report.table();
        if (lid_total > 0)
            std::cout << "LID accuracy: " << 100.0 * lid_acc << "% (" << lid_hits << "/"
                      << lid_total << ")\n";
    }
    return 0;
}

int run_sweep(const CommonOpts &common, const std::string &train_path,
              const std::string &test_path, const std::string &vocab_dir,
              const std::string &out_csv) {
    const ConfigFile cfg = load_config(common);
    const Vocabs v = load_vocabs(vocab_dir);
    const TrainConfig tc = train_config_from(cfg, v.graphemes, v.phonemes);
    const std::vector<int> depths =
        parse_ints(cfg.get_str("depths", "1,2,3,4,6"), "depths");

    std::ofstream csv(out_csv, std::ios::trunc);
    check(csv.good(), "cannot write ", out_csv);
    const std::vector<SweepRow> rows =
        sweep_phn_layers<float>(tc, read_manifest(train_path), read_manifest(test_path),
                                v.graphemes, v.phonemes, depths, &csv);
    check(csv.good(), "short write to ", out_csv);
    std::cout << "phn_layers  WER       CER       dev_loss\n";
    for (const SweepRow &row : rows) {
        std::cout << row.phn_layers << "           " << row.wer << "   " << row.cer << "   "
                  << row.dev_loss << "\n";
    }
    std::cout << "sweep table -> " << out_csv << "\n";
    return 0;
}

}  // namespace

int main(int argc, char **argv) {
    CLI::App app{"koel: dual-decoder conformer ASR on synthetic tone languages"};
    app.require_subcommand(1);

    CommonOpts synth_common;
    std::string synth_out;
    CLI::App *synth = app.add_subcommand("synth", "generate a synthetic dataset");
    synth->add_option("--out", synth_out, "output directory")->required();
    add_common(synth, &synth_common);

    std::string pv_train, pv_out;
    CLI::App *pv = app.add_subcommand("prepare-vocab", "build vocabularies from a manifest");
    pv->add_option("--train", pv_train, "training manifest (JSONL)")->required();
    pv->add_option("--out", pv_out, "output directory")->required();

    std::string ef_manifest, ef_out;
    CLI::App *ef = app.add_subcommand("extract-features", "write feature caches");
    ef->add_option("--manifest", ef_manifest, "manifest (JSONL)")->required();
    ef->add_option("--out", ef_out, "output directory")->required();

    CommonOpts lm_common;
    std::string lm_train_path, lm_out;
    CLI::App *lmt = app.add_subcommand("lm-train", "train the n-gram LM");
    lmt->add_option("--train", lm_train_path, "training manifest (JSONL)")->required();
    lmt->add_option("--out", lm_out, "output LM file")->required();
    add_common(lmt, &lm_common);

    CommonOpts train_common;
    std::string tr_train, tr_dev, tr_vocab, tr_out, tr_resume;
    CLI::App *tr = app.add_subcommand("train", "train the model");
    tr->add_option("--train", tr_train, "training manifest (JSONL)")->required();
    tr->add_option("--dev", tr_dev, "validation manifest (defaults to --train)");
    tr->add_option("--vocab-dir", tr_vocab, "directory from prepare-vocab")->required();
    tr->add_option("--out", tr_out, "output directory (checkpoints + metrics)")->required();
    tr->add_option("--resume", tr_resume, "checkpoint to resume from");
    add_common(tr, &train_common);

    CommonOpts dec_common;
    std::string de_manifest, de_ckpt, de_vocab, de_lm, de_out;
    CLI::App *de = app.add_subcommand("decode", "decode a manifest");
    de->add_option("--manifest", de_manifest, "manifest (JSONL)")->required();
    de->add_option("--checkpoint", de_ckpt, "model checkpoint")->required();
    de->add_option("--vocab-dir", de_vocab, "directory from prepare-vocab")->required();
    de->add_option("--lm", de_lm, "n-gram LM for shallow fusion");
    de->add_option("--out", de_out, "output hypotheses (JSONL)")->required();
    add_common(de, &dec_common);

    std::string sc_hyps;
    bool sc_json = false;
    CLI::App *sc = app.add_subcommand("score", "score decode output");
    sc->add_option("--hyps", sc_hyps, "decode output (JSONL)")->required();
    sc->add_flag("--json", sc_json, "machine-readable report");

    CommonOpts sweep_common;
    std::string sw_train, sw_test, sw_vocab, sw_out;
    CLI::App *sw = app.add_subcommand("sweep", "phoneme-decoder depth sweep");
    sw->add_option("--train", sw_train, "training manifest (JSONL)")->required();
    sw->add_option("--test", sw_test, "test manifest (JSONL)")->required();
    sw->add_option("--vocab-dir", sw_vocab, "directory from prepare-vocab")->required();
    sw->add_option("--out", sw_out, "output CSV")->required();
    add_common(sw, &sweep_common);

    CLI11_PARSE(app, argc, argv);

    try {
        if (synth->parsed()) return run_synth(synth_common, synth_out);
        if (pv->parsed()) return run_prepare_vocab(pv_train, pv_out);
        if (ef->parsed()) return run_extract_features(ef_manifest, ef_out);
        if (lmt->parsed()) return run_lm_train(lm_common, lm_train_path, lm_out);
        if (tr->parsed()) return run_train(train_common, tr_train, tr_dev, tr_vocab, tr_out,
                                           tr_resume);
        if (de->parsed())
            return run_decode(dec_common, de_manifest, de_ckpt, de_vocab, de_lm, de_out);
        if (sc->parsed()) return run_score(sc_hyps, sc_json);
        if (sw->parsed()) return run_sweep(sweep_common, sw_train, sw_test, sw_vocab, sw_out);
    } catch (const std::exception &e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    std::cerr << "error: no subcommand\n";
    return 1;
}
