// vbridge: command-line driver for vocabulary transplantation.

#include <algorithm>
#include <ctime>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "vbridge/evalharness.hpp"

namespace fs = std::filesystem;
using namespace vbridge;
using nlohmann::json;

namespace {

constexpr const char* kVersion = "0.1.0";

// Run record written next to a command's outputs.
class Manifest {
 public:
  explicit Manifest(std::string command) {
    doc_["command"] = std::move(command);
    doc_["version"] = kVersion;
    std::time_t now = std::time(nullptr);
    char buf[32];
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&now));
    doc_["started"] = buf;
    doc_["inputs"] = json::array();
    doc_["outputs"] = json::array();
    doc_["seeds"] = json::object();
    doc_["params"] = json::object();
  }

  void input(const fs::path& p) { doc_["inputs"].push_back(entry(p)); }
  void output(const fs::path& p) { doc_["outputs"].push_back(entry(p)); }
  void seed(const std::string& name, std::uint64_t v) { doc_["seeds"][name] = v; }
  template <class T>
  void param(const std::string& name, const T& v) {
    doc_["params"][name] = v;
  }

  void write(const fs::path& dir) {
    fs::create_directories(dir);
    std::string name = doc_["command"].get<std::string>();
    std::replace(name.begin(), name.end(), ' ', '-');
    fs::path path = dir / ("manifest-" + name + ".json");
    std::ofstream out(path);
    if (!out) throw Error("cannot write " + path.string());
    out << doc_.dump(2) << '\n';
  }

 private:
  static json entry(const fs::path& p) {
    json e{{"path", p.string()}};
    if (fs::is_regular_file(p)) {
      e["sha256"] = sha256_file(p);
    } else if (fs::is_directory(p)) {
      json files = json::object();
      for (const auto& f : fs::directory_iterator(p)) {
        if (f.is_regular_file()) files[f.path().filename().string()] = sha256_file(f.path());
      }
      e["sha256"] = files;
    }
    return e;
  }

  json doc_;
};

fs::path run_dir_for(const std::string& run_dir, const fs::path& primary_output) {
  if (!run_dir.empty()) return run_dir;
  fs::path parent = primary_output.parent_path();
  return parent.empty() ? fs::path(".") : parent;
}

std::vector<std::vector<TokenId>> corpus_ids(const Corpus& corpus, const SegmentationModel& bpe,
                                             const Vocabulary& vocab) {
  std::vector<std::vector<TokenId>> ids;
  for (const auto& s : segment_corpus(bpe, corpus)) ids.push_back(to_ids(vocab, s.tokens));
  return ids;
}

void ensure_parent(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << text;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Vocabulary transplantation toolkit"};
  app.set_config("--config", "", "INI/TOML file with option values");
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);
  std::string run_dir;
  app.add_option("--run-dir", run_dir, "Directory for the run manifest (default: next to the main output)");

  // learn-vocab ---------------------------------------------------------------
  auto* learn = app.add_subcommand("learn-vocab", "Learn BPE merges and the resulting vocabulary");
  std::string lv_corpus, lv_merges_out, lv_vocab_out;
  std::size_t lv_merges = 8000;
  learn->add_option("--corpus", lv_corpus, "Training text, one sentence per line")->required()->check(CLI::ExistingFile);
  learn->add_option("--num-merges", lv_merges, "Number of merges")->capture_default_str();
  learn->add_option("--out-merges", lv_merges_out, "Merge table output")->required();
  learn->add_option("--out-vocab", lv_vocab_out, "Vocabulary output")->required();

  // pretrain ------------------------------------------------------------------
  auto* pre = app.add_subcommand("pretrain", "Pretrain the masked-LM encoder");
  std::string pr_corpus, pr_merges, pr_vocab, pr_out, pr_emb;
  PretrainConfig pr_cfg;
  pre->add_option("--corpus", pr_corpus)->required()->check(CLI::ExistingFile);
  pre->add_option("--merges", pr_merges)->required()->check(CLI::ExistingFile);
  pre->add_option("--vocab", pr_vocab)->required()->check(CLI::ExistingFile);
  pre->add_option("--out", pr_out, "Checkpoint directory")->required();
  pre->add_option("--out-emb", pr_emb, "Also write the embedding table as text");
  pre->add_option("--steps", pr_cfg.steps)->capture_default_str();
  pre->add_option("--batch-size", pr_cfg.batch_size)->capture_default_str();
  pre->add_option("--lr", pr_cfg.adam.learning_rate)->capture_default_str();
  pre->add_option("--dim", pr_cfg.encoder.dim)->capture_default_str();
  pre->add_option("--layers", pr_cfg.encoder.num_layers)->capture_default_str();
  pre->add_option("--heads", pr_cfg.encoder.num_heads)->capture_default_str();
  pre->add_option("--ffn", pr_cfg.encoder.ffn_dim)->capture_default_str();
  pre->add_option("--max-seq-len", pr_cfg.encoder.max_seq_len)->capture_default_str();
  pre->add_option("--seed", pr_cfg.encoder.seed)->capture_default_str();

  // train-generator -----------------------------------------------------------
  auto* tg = app.add_subcommand("train-generator", "Train an ATT/PATT generator against a frozen model");
  std::string tg_ckpt, tg_merges, tg_corpus, tg_out, tg_curve, tg_kind = "patt", tg_prefactor = "verbatim";
  TrainConfig tg_cfg;
  tg->add_option("--checkpoint", tg_ckpt)->required()->check(CLI::ExistingDirectory);
  tg->add_option("--merges", tg_merges)->required()->check(CLI::ExistingFile);
  tg->add_option("--corpus", tg_corpus)->required()->check(CLI::ExistingFile);
  tg->add_option("--out", tg_out, "Generator parameter file")->required();
  tg->add_option("--curve", tg_curve, "Loss curve output (default: <out>.curve.tsv)");
  tg->add_option("--kind", tg_kind)->check(CLI::IsMember({"att", "patt"}))->capture_default_str();
  tg->add_option("--prefactor", tg_prefactor)->check(CLI::IsMember({"verbatim", "plain"}))->capture_default_str();
  tg->add_option("--steps", tg_cfg.steps)->capture_default_str();
  tg->add_option("--batch-size", tg_cfg.batch_size)->capture_default_str();
  tg->add_option("--lambda", tg_cfg.lambda)->capture_default_str();
  tg->add_option("--lr", tg_cfg.adam.learning_rate)->capture_default_str();
  tg->add_option("--p-merge", tg_cfg.augment.p_merge)->capture_default_str();
  tg->add_option("--p-split", tg_cfg.augment.p_split)->capture_default_str();
  tg->add_option("--seed", tg_cfg.seed)->capture_default_str();
  tg->add_option("--checkpoint-every", tg_cfg.checkpoint_every)->capture_default_str();

  // transplant ----------------------------------------------------------------
  auto* tp = app.add_subcommand("transplant", "Build an embedding table for a target vocabulary");
  std::string tp_emb, tp_vocab, tp_merges, tp_target, tp_gen, tp_out, tp_prov;
  TransplantOptions tp_opts;
  tp->add_option("--source-emb", tp_emb)->required()->check(CLI::ExistingFile);
  tp->add_option("--source-vocab", tp_vocab)->required()->check(CLI::ExistingFile);
  tp->add_option("--merges", tp_merges)->required()->check(CLI::ExistingFile);
  tp->add_option("--target-vocab", tp_target)->required()->check(CLI::ExistingFile);
  tp->add_option("--generator", tp_gen, "Generator parameters (default: AVG)")->check(CLI::ExistingFile);
  tp->add_option("--out", tp_out)->required();
  tp->add_option("--provenance", tp_prov, "Provenance output (default: <out>.provenance)");
  tp->add_option("--seed", tp_opts.seed, "Fallback seed")->capture_default_str();
  tp->add_option("--fallback-stddev", tp_opts.fallback_stddev)->capture_default_str();
  tp->add_flag("!--no-generate", tp_opts.generate, "Use the random fallback for every unseen token");

  // report --------------------------------------------------------------------
  auto* rp = app.add_subcommand("report", "Count shared and unseen target tokens");
  std::string rp_source, rp_target, rp_list;
  rp->add_option("--source-vocab", rp_source)->required()->check(CLI::ExistingFile);
  rp->add_option("--target-vocab", rp_target)->required()->check(CLI::ExistingFile);
  rp->add_option("--list", rp_list, "Write unseen tokens here, one per line");

  // eval ----------------------------------------------------------------------
  auto* ev = app.add_subcommand("eval", "Experiments");
  ev->require_subcommand(1);

  auto* ev_seq = ev->add_subcommand("seq-len", "Mean tokens per sentence against merge count");
  std::string sq_corpus, sq_out;
  std::vector<std::size_t> sq_merges{0, 1000, 2000, 5000};
  ev_seq->add_option("--corpus", sq_corpus)->required()->check(CLI::ExistingFile);
  ev_seq->add_option("--merges", sq_merges, "Ascending merge counts")->delimiter(',')->capture_default_str();
  ev_seq->add_option("--out", sq_out, "Table output (default: stdout only)");

  auto* ev_nn = ev->add_subcommand("neighbors", "Cosine nearest neighbours of a token");
  std::string nn_emb, nn_token;
  std::size_t nn_k = 10;
  ev_nn->add_option("--emb", nn_emb)->required()->check(CLI::ExistingFile);
  ev_nn->add_option("--token", nn_token, "Rendered token, e.g. ##ing")->required();
  ev_nn->add_option("-k", nn_k)->capture_default_str();

  auto* ev_probe = ev->add_subcommand("probe", "Finetune the pretrained backbone from each init");
  std::string pb_ckpt, pb_corpus, pb_merges, pb_vocab, pb_out;
  std::vector<std::string> pb_inits;
  double pb_held_out = 0.2;
  ProbeConfig pb_cfg;
  ev_probe->add_option("--checkpoint", pb_ckpt)->required()->check(CLI::ExistingDirectory);
  ev_probe->add_option("--corpus", pb_corpus, "Downstream text")->required()->check(CLI::ExistingFile);
  ev_probe->add_option("--merges", pb_merges, "Downstream merges")->required()->check(CLI::ExistingFile);
  ev_probe->add_option("--vocab", pb_vocab, "Downstream vocabulary")->required()->check(CLI::ExistingFile);
  ev_probe->add_option("--init", pb_inits, "label=embedding-file, repeatable")->required();
  ev_probe->add_option("--held-out", pb_held_out, "Held-out fraction")->capture_default_str();
  ev_probe->add_option("--steps", pb_cfg.steps)->capture_default_str();
  ev_probe->add_option("--out", pb_out, "Table output");

  auto* ev_bench = ev->add_subcommand("benchmark", "Synthetic distribution-shift benchmark end to end");
  std::string bm_out = "benchmark";
  BenchmarkConfig bm_cfg;
  ev_bench->add_option("--out-dir", bm_out)->capture_default_str();
  ev_bench->add_option("--pretrain-steps", bm_cfg.pretrain.steps)->capture_default_str();
  ev_bench->add_option("--generator-steps", bm_cfg.generator.steps)->capture_default_str();
  ev_bench->add_option("--probe-steps", bm_cfg.probe.steps)->capture_default_str();
  ev_bench->add_option("--upstream-sentences", bm_cfg.upstream_sentences)->capture_default_str();
  ev_bench->add_option("--downstream-sentences", bm_cfg.downstream_sentences)->capture_default_str();

  // synth ---------------------------------------------------------------------
  auto* sy = app.add_subcommand("synth", "Write the synthetic upstream/downstream corpora");
  std::string sy_out;
  std::size_t sy_up = 20000, sy_down = 5000;
  std::uint64_t sy_seed = 11;
  sy->add_option("--out-dir", sy_out)->required();
  sy->add_option("--upstream", sy_up)->capture_default_str();
  sy->add_option("--downstream", sy_down)->capture_default_str();
  sy->add_option("--seed", sy_seed)->capture_default_str();

  CLI11_PARSE(app, argc, argv);

  try {
    for (const auto* p : {&lv_merges_out, &lv_vocab_out, &pr_emb, &tg_out, &tg_curve, &tp_out, &tp_prov}) {
      if (!p->empty()) ensure_parent(*p);
    }
    if (*learn) {
      Manifest m("learn-vocab");
      m.input(lv_corpus);
      m.param("num_merges", lv_merges);
      Corpus corpus = Corpus::load(lv_corpus);
      SegmentationModel bpe = learn_bpe(corpus, lv_merges);
      bpe.save(lv_merges_out);
      build_vocabulary(corpus, bpe).save(lv_vocab_out);
      std::cout << "merges: " << bpe.size() << "\n";
      m.output(lv_merges_out);
      m.output(lv_vocab_out);
      m.write(run_dir_for(run_dir, lv_vocab_out));
    } else if (*pre) {
      Manifest m("pretrain");
      for (const auto& p : {pr_corpus, pr_merges, pr_vocab}) m.input(p);
      auto vocab = std::make_shared<const Vocabulary>(Vocabulary::load(pr_vocab));
      auto bpe = SegmentationModel::load(pr_merges);
      auto ids = corpus_ids(Corpus::load(pr_corpus), bpe, *vocab);
      PretrainReport report;
      PretrainedModel model = pretrain(ids, vocab, pr_cfg, &report);
      save_checkpoint(model, pr_out);
      std::cout << "held-out loss: " << report.initial_held_out_loss << " -> " << report.final_held_out_loss << "\n";
      m.seed("encoder", pr_cfg.encoder.seed);
      m.param("steps", pr_cfg.steps);
      m.param("batch_size", pr_cfg.batch_size);
      m.param("dim", pr_cfg.encoder.dim);
      m.param("final_held_out_loss", report.final_held_out_loss);
      m.output(pr_out);
      if (!pr_emb.empty()) {
        save_embeddings(model.embedding_matrix(), pr_emb);
        m.output(pr_emb);
      }
      m.write(run_dir_for(run_dir, pr_out));
    } else if (*tg) {
      Manifest m("train-generator");
      for (const auto& p : {tg_merges, tg_corpus}) m.input(p);
      m.input(tg_ckpt);
      tg_cfg.kind = generator_kind_from_string(tg_kind);
      tg_cfg.verbatim_prefactor = tg_prefactor == "verbatim";
      PretrainedModel model = load_checkpoint(tg_ckpt);
      auto bpe = SegmentationModel::load(tg_merges);
      auto corpus = segment_corpus(bpe, Corpus::load(tg_corpus));
      TrainResult result = train_generator(model, bpe, corpus, tg_cfg);
      save_generator(result.params, tg_out);
      fs::path curve = tg_curve.empty() ? fs::path(tg_out + ".curve.tsv") : fs::path(tg_curve);
      std::ostringstream text;
      write_loss_curve(text, result.curve);
      write_text(curve, text.str());
      for (const auto& [step, params] : result.checkpoints) {
        if (step == tg_cfg.steps || step == 0) continue;
        fs::path p = tg_out + ".step" + std::to_string(step);
        save_generator(params, p);
        m.output(p);
      }
      std::cout << "L_total: " << result.curve.front().total << " -> " << result.curve.back().total << "\n";
      m.seed("trainer", tg_cfg.seed);
      m.param("kind", tg_kind);
      m.param("prefactor", tg_prefactor);
      m.param("steps", tg_cfg.steps);
      m.param("lambda", tg_cfg.lambda);
      m.output(tg_out);
      m.output(curve);
      m.write(run_dir_for(run_dir, tg_out));
    } else if (*tp) {
      Manifest m("transplant");
      for (const auto& p : {tp_emb, tp_vocab, tp_merges, tp_target}) m.input(p);
      auto source_vocab = std::make_shared<const Vocabulary>(Vocabulary::load(tp_vocab));
      EmbeddingMatrix source = load_embeddings(tp_emb, source_vocab);
      auto bpe = SegmentationModel::load(tp_merges);
      auto target = std::make_shared<const Vocabulary>(Vocabulary::load(tp_target));
      GeneratorParams<double> gen = GeneratorParams<double>::avg(source.dim());
      if (!tp_gen.empty()) {
        m.input(tp_gen);
        gen = load_generator(tp_gen);
      }
      TransplantResult result = transplant(source, bpe, target, gen, tp_opts);
      save_embeddings(result.matrix, tp_out);
      fs::path prov = tp_prov.empty() ? fs::path(tp_out + ".provenance") : fs::path(tp_prov);
      std::ostringstream text;
      write_provenance(text, *target, result.provenance);
      write_text(prov, text.str());
      std::size_t counts[3] = {0, 0, 0};
      for (auto p : result.provenance) ++counts[static_cast<int>(p)];
      std::cout << "copied: " << counts[0] << "\ngenerated: " << counts[1] << "\nfallback: " << counts[2] << "\n";
      m.seed("fallback", tp_opts.seed);
      m.param("generator", tp_gen.empty() ? std::string("AVG") : std::string(to_string(gen.kind)));
      m.output(tp_out);
      m.output(prov);
      m.write(run_dir_for(run_dir, tp_out));
    } else if (*rp) {
      auto report = mismatch_report(Vocabulary::load(rp_source), Vocabulary::load(rp_target));
      std::cout << "shared: " << report.shared << "\nunseen: " << report.unseen << "\n";
      if (!rp_list.empty()) {
        std::string text;
        for (const auto& t : report.unseen_tokens) text += t.rendered() + "\n";
        write_text(rp_list, text);
      }
    } else if (*ev_seq) {
      auto rows = seq_length_sweep(Corpus::load(sq_corpus), sq_merges);
      std::ostringstream text;
      write_sweep_table(text, rows);
      std::cout << text.str();
      if (!sq_out.empty()) {
        Manifest m("eval seq-len");
        m.input(sq_corpus);
        write_text(sq_out, text.str());
        m.output(sq_out);
        m.write(run_dir_for(run_dir, sq_out));
      }
    } else if (*ev_nn) {
      EmbeddingMatrix emb = load_embeddings(nn_emb);
      for (const auto& n : nearest_neighbors(emb, Token::parse(nn_token), nn_k)) {
        std::cout << n.token.rendered() << '\t' << n.similarity << '\n';
      }
    } else if (*ev_probe) {
      Manifest m("eval probe");
      for (const auto& p : {pb_corpus, pb_merges, pb_vocab}) m.input(p);
      m.input(pb_ckpt);
      PretrainedModel model = load_checkpoint(pb_ckpt);
      auto vocab = std::make_shared<const Vocabulary>(Vocabulary::load(pb_vocab));
      auto ids = corpus_ids(Corpus::load(pb_corpus), SegmentationModel::load(pb_merges), *vocab);
      auto n_eval = static_cast<std::size_t>(pb_held_out * static_cast<double>(ids.size()));
      if (n_eval == 0 || n_eval >= ids.size()) throw Error("held-out split leaves an empty side");
      std::vector<std::vector<TokenId>> train(ids.begin(), ids.end() - static_cast<std::ptrdiff_t>(n_eval));
      std::vector<std::vector<TokenId>> held(ids.end() - static_cast<std::ptrdiff_t>(n_eval), ids.end());
      std::vector<ProbeInit> inits;
      for (const auto& entry : pb_inits) {
        auto eq = entry.find('=');
        if (eq == std::string::npos) throw Error("--init expects label=path, got " + entry);
        fs::path path = entry.substr(eq + 1);
        m.input(path);
        inits.push_back({entry.substr(0, eq), load_embeddings(path, vocab)});
      }
      auto curves = downstream_probe(model, inits, train, held, pb_cfg);
      std::ostringstream text;
      write_probe_table(text, curves);
      std::cout << text.str();
      if (!pb_out.empty()) {
        write_text(pb_out, text.str());
        m.output(pb_out);
        m.write(run_dir_for(run_dir, pb_out));
      }
    } else if (*ev_bench) {
      Manifest m("eval benchmark");
      fs::create_directories(bm_out);
      auto result = run_benchmark(bm_cfg, &std::cout);
      std::ostringstream probes, conv, curve;
      write_probe_table(probes, result.probes);
      write_convergence_table(conv, result.convergence);
      write_loss_curve(curve, result.patt_curve);
      write_text(fs::path(bm_out) / "probes.tsv", probes.str());
      write_text(fs::path(bm_out) / "convergence.tsv", conv.str());
      write_text(fs::path(bm_out) / "patt_loss_curve.tsv", curve.str());
      std::cout << conv.str();
      for (const char* f : {"probes.tsv", "convergence.tsv", "patt_loss_curve.tsv"}) m.output(fs::path(bm_out) / f);
      m.seed("upstream", bm_cfg.upstream_seed);
      m.seed("downstream", bm_cfg.downstream_seed);
      m.seed("encoder", bm_cfg.pretrain.encoder.seed);
      m.seed("generator", bm_cfg.generator.seed);
      m.seed("probe", bm_cfg.probe.seed);
      m.param("seconds", result.pretrain_seconds + result.generator_seconds + result.probe_seconds);
      m.write(run_dir.empty() ? fs::path(bm_out) : fs::path(run_dir));
    } else if (*sy) {
      Manifest m("synth");
      SyntheticLanguage lang;
      fs::create_directories(sy_out);
      for (auto [name, corpus] : {std::pair{"upstream.txt", lang.upstream(sy_up, sy_seed)},
                                  std::pair{"downstream.txt", lang.downstream(sy_down, sy_seed + 1)}}) {
        std::string text;
        for (const auto& s : corpus.sentences) {
          for (std::size_t i = 0; i < s.size(); ++i) text += (i ? " " : "") + s[i];
          text += '\n';
        }
        write_text(fs::path(sy_out) / name, text);
        m.output(fs::path(sy_out) / name);
      }
      m.seed("corpus", sy_seed);
      m.write(run_dir.empty() ? fs::path(sy_out) : fs::path(run_dir));
    }
  } catch (const ParseError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
