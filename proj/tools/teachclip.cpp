// teachclip: corpus generation, training, indexing, search, evaluation and
// cost/gradient/distillation reports from one executable.

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "teachclip/teachclip.hpp"

namespace fs = std::filesystem;
using namespace teachclip;

namespace {

// Error classes beyond the library's: raised only here.
class UsageError : public Error {
 public:
  explicit UsageError(const std::string& what) : Error("usage", what) {}
};
class MissingFile : public Error {
 public:
  explicit MissingFile(const std::string& what) : Error("missing-file", what) {}
};
class CheckFailed : public Error {
 public:
  explicit CheckFailed(const std::string& what) : Error("gradcheck-failed", what) {}
};

const std::map<std::string, int> kExitCodes = {
    {"usage", 2},           {"invalid-config", 3},   {"missing-file", 4},       {"io-error", 5},
    {"corpus-integrity", 6}, {"invalid-manifest", 7}, {"invalid-input", 8},      {"invalid-shape", 9},
    {"degenerate-input", 10}, {"invalid-eval", 11},  {"invalid-spec", 12},      {"unsupported-corpus", 13},
    {"invalid-corpus", 14}, {"non-finite-gradient", 15}, {"probe-failure", 16}, {"gradcheck-failed", 17},
};

int report_error(const std::string& kind, const std::string& message) {
  std::string flat = message;
  for (char& c : flat)
    if (c == '\n' || c == '\r') c = ' ';
  std::string quoted;
  for (char c : flat) {
    if (c == '"' || c == '\\') quoted += '\\';
    quoted += c;
  }
  std::cerr << "error: class=" << kind << " message=\"" << quoted << "\"\n";
  const auto it = kExitCodes.find(kind);
  return it == kExitCodes.end() ? 1 : it->second;
}

std::string utc_now() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::string fnv1a_hex(const std::string& s) {
  std::uint64_t h = 14695981039346656037ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string default_out(const std::string& sub) {
  const char* env = std::getenv("TEACHCLIP_OUT");
  const fs::path base = env && *env ? fs::path(env) : fs::path("teachclip-out");
  return (base / sub).string();
}

void require_file(const fs::path& p, const char* what) {
  if (!fs::is_regular_file(p)) throw MissingFile(std::string(what) + " not found: " + p.string());
}

void require_corpus(const fs::path& dir) {
  for (const char* f : {"manifest.json", "frames.bin", "texts.bin", "relevance.bin", "topics.bin"})
    require_file(dir / f, "corpus file");
}

void make_out_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
}

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::trunc | std::ios::binary);
  if (!out) throw IoError("cannot open for writing: " + p.string());
  out << text;
  if (!out) throw IoError("write failed: " + p.string());
}

// The run record sits beside the output directory so the directory itself
// stays byte-identical across reruns.
fs::path record_path(const fs::path& out) {
  fs::path p = fs::absolute(out).lexically_normal();
  if (!p.has_filename()) p = p.parent_path();
  if (p == p.root_path()) return p / "run.json";
  return p.parent_path() / (p.filename().string() + ".run.json");
}

struct RunContext {
  std::string command_line;
  std::string config_text;
  std::string started_at;
};

void write_run_record(const RunContext& ctx, const std::string& sub, std::uint64_t seed, const fs::path& out,
                      const std::vector<fs::path>& outputs) {
  nlohmann::ordered_json j;
  j["subcommand"] = sub;
  j["command_line"] = ctx.command_line;
  j["config_hash"] = fnv1a_hex(ctx.config_text);
  j["seed"] = seed;
  j["started_at"] = ctx.started_at;
  j["finished_at"] = utc_now();
  j["output_dir"] = out.string();
  j["outputs"] = nlohmann::ordered_json::array();
  for (const auto& p : outputs) j["outputs"].push_back(p.string());
  write_text(record_path(out), j.dump(2) + "\n");
}

StudentParams load_params(const fs::path& p) {
  require_file(p, "checkpoint");
  return load_checkpoint(p);
}

void check_dims(const StudentParams& params, const CorpusManifest& m) {
  if (params.config.dim != m.dim || params.config.text_dim != m.text_dim) {
    throw InvalidConfig("checkpoint dims (d=" + std::to_string(params.config.dim) +
                        ", d_t=" + std::to_string(params.config.text_dim) + ") do not match corpus (d=" +
                        std::to_string(m.dim) + ", d_t=" + std::to_string(m.text_dim) + ")");
  }
  if (m.frames > params.config.max_frames) throw InvalidConfig("corpus has more frames than the checkpoint supports");
}

CorpusManifest read_manifest(const fs::path& dir) {
  std::ifstream in(dir / "manifest.json");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw CorpusIntegrity(std::string("manifest: ") + e.what());
  }
  return manifest_from_json(j);
}

// ---------------------------------------------------------------------------
// Options
// ---------------------------------------------------------------------------

struct GenOpts {
  std::string out = default_out("corpus");
  CorpusManifest manifest;
};

struct TrainOpts {
  std::string out = default_out("train");
  std::string corpus;
  std::string init_checkpoint;
  std::string teacher_cache;
  StudentConfig student{.layers = 1};
  TrainConfig train;
  std::string lr_schedule = "cosine";
  std::string enabled_losses = "all";
  std::string teacher = "xpool";
  std::string selection = "last";
  double afa_temperature = 1.0;
};

struct IndexOpts {
  std::string out = default_out("index");
  std::string checkpoint;
  std::string corpus;
  std::string split = "test";
};

struct SearchOpts {
  std::string out = default_out("search");
  std::string checkpoint;
  std::string store;
  std::string corpus;
  std::string split = "test";
  std::string text;
  std::size_t k = 10;
  std::size_t shards = 1;
};

struct EvalOpts {
  std::string out = default_out("eval");
  std::string checkpoint;
  std::string store;
  std::string corpus;
  std::string split = "test";
};

struct CostOpts {
  std::string out = default_out("cost");
  std::int64_t m = 12;
  std::int64_t d = 512;
  std::int64_t words = kDefaultWords;
  std::vector<std::string> spec_files;
};

struct GradOpts {
  std::string out = default_out("gradcheck");
  std::size_t seeds = 20;
  std::uint64_t seed = 1;
  NetworkCheckConfig check;
  double tolerance = 1e-4;
};

struct DistillOpts {
  std::string out = default_out("distill");
  std::size_t seeds = 5;
  DistillConfig config;
};

void add_manifest_flags(CLI::App* c, CorpusManifest& m) {
  c->add_option("--n_train", m.n_train, "training pairs")->check(CLI::PositiveNumber);
  c->add_option("--n_val", m.n_val, "validation pairs")->check(CLI::PositiveNumber);
  c->add_option("--n_test", m.n_test, "test pairs")->check(CLI::PositiveNumber);
  c->add_option("--m", m.frames, "frames per video")->check(CLI::PositiveNumber);
  c->add_option("--d", m.dim, "frame feature dim")->check(CLI::PositiveNumber);
  c->add_option("--d_t", m.text_dim, "text feature dim")->check(CLI::PositiveNumber);
  c->add_option("--n_topics", m.n_topics, "latent topics");
  c->add_option("--relevant_frames_per_video", m.relevant_frames, "planted relevant frames r");
  c->add_option("--noise_std", m.noise_std, "gaussian noise std");
  c->add_option("--relevance_temperature", m.relevance_temperature, "softmax temperature of the planted relevance");
}

// ---------------------------------------------------------------------------
// Subcommands
// ---------------------------------------------------------------------------

void run_gen(const GenOpts& o, const RunContext& ctx) {
  o.manifest.validate();
  const fs::path out = o.out;
  make_out_dir(out);
  const Corpus c = generate(o.manifest, out);
  std::cout << "corpus: " << c.videos.size() << " pairs (" << o.manifest.n_train << "/" << o.manifest.n_val << "/"
            << o.manifest.n_test << ") written to " << out.string() << "\n";
  write_run_record(ctx, "gen-corpus", o.manifest.seed, out,
                   {out / "manifest.json", out / "frames.bin", out / "texts.bin", out / "relevance.bin",
                    out / "topics.bin"});
}

void run_train(TrainOpts o, const RunContext& ctx) {
  o.train.schedule = parse_schedule(o.lr_schedule);
  o.train.losses = parse_loss_terms(o.enabled_losses);
  o.train.teacher = parse_teacher(o.teacher);
  o.train.selection = parse_selection(o.selection);
  o.train.validate();
  const fs::path corpus_dir = o.corpus;
  require_corpus(corpus_dir);
  if (!o.init_checkpoint.empty()) require_file(o.init_checkpoint, "initial checkpoint");
  const Corpus corpus = load_corpus(corpus_dir);

  StudentParams params;
  if (o.init_checkpoint.empty()) {
    StudentConfig sc = o.student;
    sc.dim = corpus.manifest.dim;
    sc.text_dim = corpus.manifest.text_dim;
    sc.max_frames = std::max(sc.max_frames, corpus.manifest.frames);
    sc.afa_temperature = o.afa_temperature;
    sc.validate();
    params = init_student(sc, o.train.seed);
  } else {
    params = load_checkpoint(o.init_checkpoint);
    if (o.afa_temperature != params.config.afa_temperature) o.train.afa_temperature = o.afa_temperature;
  }
  const CorpusSplit train_split = corpus.split(Split::kTrain);
  const CorpusSplit val_split = corpus.split(Split::kVal);
  TrainConfig probe = o.train;
  if (probe.afa_temperature) params.config.afa_temperature = *probe.afa_temperature;
  check_train_inputs(probe, train_split, params);

  TeacherCache cache;
  if (!o.teacher_cache.empty() && fs::exists(o.teacher_cache)) cache = TeacherCache::load(o.teacher_cache);

  const fs::path out = o.out;
  make_out_dir(out);
  TrainOptions opt;
  opt.log = &std::cerr;
  if (o.train.selection == ModelSelection::kBestValidationSumR) opt.validation = &val_split;
  if (!o.teacher_cache.empty()) opt.cache = &cache;
  const std::size_t per_epoch = steps_per_epoch(train_split.size(), o.train.batch_size);
  double epoch_total = 0.0;
  opt.on_step = [&](std::size_t step, const LossBreakdown& l) {
    epoch_total += l.total;
    if ((step + 1) % per_epoch == 0) {
      std::cout << "epoch " << (step + 1) / per_epoch << ": mean loss " << epoch_total / per_epoch << "\n";
      epoch_total = 0.0;
    }
  };
  const TrainResult r = train(o.train, train_split, params, opt);

  save_checkpoint(out / "checkpoint.bin", r.params);
  write_loss_history(out / "loss_history.csv", r.history);
  std::vector<fs::path> outputs{out / "checkpoint.bin", out / "loss_history.csv"};
  if (!o.teacher_cache.empty()) {
    cache.save(o.teacher_cache);
    outputs.push_back(o.teacher_cache);
  }
  if (r.skipped_steps) std::cerr << "warning: " << r.skipped_steps << " steps skipped\n";
  std::cout << "trained " << r.history.size() << " steps; selected epoch " << r.selected_epoch << "\n";
  write_run_record(ctx, "train", o.train.seed, out, outputs);
}

void run_index(const IndexOpts& o, const RunContext& ctx) {
  const Split split = parse_split(o.split);
  require_file(o.checkpoint, "checkpoint");
  require_corpus(o.corpus);
  const StudentParams params = load_params(o.checkpoint);
  check_dims(params, read_manifest(o.corpus));
  const CorpusSplit data = load_split(o.corpus, split);
  const fs::path out = o.out;
  make_out_dir(out);
  const FeatureStore store = build_store(params, data.videos);
  store.save(out / "store.vfs");
  std::cout << "indexed " << store.size() << " videos (" << store.dim * 4 << " bytes each)\n";
  write_run_record(ctx, "index", 0, out, {out / "store.vfs"});
}

void run_search(const SearchOpts& o, const RunContext& ctx) {
  const Split split = parse_split(o.split);
  if (o.k < 1) throw InvalidConfig("--k must be >= 1");
  require_file(o.checkpoint, "checkpoint");
  require_file(o.store, "store");
  require_corpus(o.corpus);
  const StudentParams params = load_params(o.checkpoint);
  check_dims(params, read_manifest(o.corpus));
  const FeatureStore store = FeatureStore::load(o.store);
  if (store.dim != params.config.dim) throw InvalidConfig("store dim does not match the checkpoint");
  const CorpusSplit data = load_split(o.corpus, split);
  const TextFeatureInput* text = nullptr;
  for (const auto& t : data.texts)
    if (t.text_id == o.text) text = &t;
  if (!text) throw InvalidConfig("text id '" + o.text + "' not in the " + o.split + " split");

  const fs::path out = o.out;
  make_out_dir(out);
  const RankedList r = search(store, encode_text(params, *text), o.k, o.shards, text->text_id);
  nlohmann::ordered_json j;
  j["query_id"] = r.query_id;
  j["truncated"] = r.truncated;
  j["results"] = nlohmann::ordered_json::array();
  for (std::size_t i = 0; i < r.ids.size(); ++i) {
    j["results"].push_back({{"rank", i + 1}, {"id", r.ids[i]}, {"score", r.scores[i]}});
    std::printf("%3zu  %-16s %.6f\n", i + 1, r.ids[i].c_str(), r.scores[i]);
  }
  write_text(out / "results.json", j.dump(2) + "\n");
  write_run_record(ctx, "search", 0, out, {out / "results.json"});
}

void run_eval(const EvalOpts& o, const RunContext& ctx) {
  const Split split = parse_split(o.split);
  require_file(o.checkpoint, "checkpoint");
  require_file(o.store, "store");
  require_corpus(o.corpus);
  const StudentParams params = load_params(o.checkpoint);
  check_dims(params, read_manifest(o.corpus));
  const FeatureStore store = FeatureStore::load(o.store);
  if (store.dim != params.config.dim) throw InvalidConfig("store dim does not match the checkpoint");
  const CorpusSplit data = load_split(o.corpus, split);
  const auto queries = paired_queries(params, data.texts, data.videos);
  const RetrievalReport r = evaluate(store, queries);
  const fs::path out = o.out;
  make_out_dir(out);
  save_report(out / "report.json", r);
  std::printf("R@1 %.2f  R@5 %.2f  R@10 %.2f  SumR %.2f  MdR %.1f  MnR %.2f  (%zu queries)\n", 100 * r.r1,
              100 * r.r5, 100 * r.r10, r.sum_r, r.median_rank, r.mean_rank, r.query_count);
  write_run_record(ctx, "eval", 0, out, {out / "report.json"});
}

void run_cost(const CostOpts& o, const RunContext& ctx) {
  if (o.m < 1 || o.d < 1 || o.words < 1) throw InvalidConfig("--m, --d and --words must be >= 1");
  std::vector<MethodCostSpec> specs = builtin_specs();
  for (const auto& f : o.spec_files) {
    require_file(f, "method spec");
    std::ifstream in(f);
    nlohmann::json j;
    try {
      in >> j;
    } catch (const nlohmann::json::exception& e) {
      throw InvalidSpec(f + ": " + e.what());
    }
    specs.push_back(spec_from_json(j));
  }
  const auto rows = compare(specs, o.m, o.d, o.words);
  const fs::path out = o.out;
  make_out_dir(out);
  const std::string table = format_cost_table(rows);
  std::cout << table;
  write_text(out / "cost.txt", table);
  write_text(out / "cost.json", cost_report_json(rows).dump(2) + "\n");
  write_run_record(ctx, "cost", 0, out, {out / "cost.txt", out / "cost.json"});
}

void run_gradcheck(const GradOpts& o, const RunContext& ctx) {
  if (o.seeds < 1) throw InvalidConfig("--seeds must be >= 1");
  if (o.check.d % o.check.heads != 0) throw InvalidConfig("--d must be divisible by --heads");
  if (!(o.check.h >= 1e-7 && o.check.h <= 1e-3)) throw InvalidConfig("--h must lie in [1e-7, 1e-3]");
  const fs::path out = o.out;
  make_out_dir(out);
  nlohmann::ordered_json j;
  j["tolerance"] = o.tolerance;
  j["runs"] = nlohmann::ordered_json::array();
  double worst = 0.0;
  for (std::size_t k = 0; k < o.seeds; ++k) {
    const std::uint64_t seed = o.seed + k;
    const GradCheckReport r = network_grad_check(seed, o.check);
    worst = std::max(worst, r.max_rel_error);
    std::printf("seed %llu: max rel error %.3e over %zu coordinates\n", static_cast<unsigned long long>(seed),
                r.max_rel_error, r.coordinates);
    j["runs"].push_back({{"seed", seed}, {"max_rel_error", r.max_rel_error}, {"coordinates", r.coordinates}});
  }
  j["max_rel_error"] = worst;
  write_text(out / "gradcheck.json", j.dump(2) + "\n");
  write_run_record(ctx, "gradcheck", o.seed, out, {out / "gradcheck.json"});
  if (!(worst < o.tolerance)) {
    char buf[96];
    std::snprintf(buf, sizeof buf, "max relative error %.3e exceeds %.1e", worst, o.tolerance);
    throw CheckFailed(buf);
  }
}

void run_distill_report(DistillOpts o, const RunContext& ctx) {
  if (o.seeds < 1) throw InvalidConfig("--seeds must be >= 1");
  o.config.train.validate();
  o.config.manifest.validate();
  o.config.seeds.clear();
  for (std::size_t s = 1; s <= o.seeds; ++s) o.config.seeds.push_back(s);
  const fs::path out = o.out;
  make_out_dir(out);
  const DistillReport r = run_distill(o.config, &std::cerr);
  const std::string table = format_distill_table(r);
  std::cout << table;
  write_text(out / "distill.txt", table);
  write_text(out / "distill.json", distill_report_json(r).dump(2) + "\n");
  write_run_record(ctx, "distill-report", o.config.seeds.front(), out, {out / "distill.txt", out / "distill.json"});
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"teachclip: distillation of a multi-grained teacher into a single-vector video retriever"};
  app.option_defaults()->always_capture_default();
  app.require_subcommand(1, 1);
  app.set_config("--config", "", "INI/TOML file supplying any flag ([subcommand] sections); command line wins");
  app.footer("Environment: TEACHCLIP_OUT sets the default output root (default ./teachclip-out).");

  GenOpts gen;
  auto* g = app.add_subcommand("gen-corpus", "generate a planted-topic corpus");
  g->add_option("--out", gen.out, "output directory");
  g->add_option("--seed", gen.manifest.seed, "generator seed");
  add_manifest_flags(g, gen.manifest);

  TrainOpts tr;
  auto* t = app.add_subcommand("train", "train the student");
  t->add_option("--corpus", tr.corpus, "corpus directory")->required();
  t->add_option("--out", tr.out, "output directory (checkpoint.bin, loss_history.csv)");
  t->add_option("--checkpoint", tr.init_checkpoint, "initial checkpoint (default: fresh init from --seed)");
  t->add_option("--epochs", tr.train.epochs, "epochs");
  t->add_option("--batch_size", tr.train.batch_size, "pairs per batch b");
  t->add_option("--learning_rate", tr.train.learning_rate, "base learning rate");
  t->add_option("--lr_schedule", tr.lr_schedule, "cosine | constant");
  t->add_option("--seed", tr.train.seed, "seed for init and shuffling");
  t->add_option("--enabled_losses,--losses", tr.enabled_losses, "all | comma list of in, cgt, fgt");
  t->add_option("--teacher", tr.teacher, "xpool | meanpool | oracle");
  t->add_option("--sigma_temperature", tr.train.sigma_temperature, "softmax temperature inside the coarse loss");
  t->add_option("--afa_temperature", tr.afa_temperature, "AFA softmax temperature tau_A");
  t->add_option("--teacher_temperature", tr.train.teacher_temperature, "teacher frame softmax temperature tau_T");
  t->add_option("--selection", tr.selection, "last | best-sumr (validation split)");
  t->add_option("--teacher_cache", tr.teacher_cache, "teacher signal cache file (read if present, then written)");
  t->add_option("--layers", tr.student.layers, "temporal blocks L");
  t->add_option("--ff_dim", tr.student.ff_dim, "feed-forward width");
  t->add_option("--heads", tr.student.heads, "attention heads");
  t->add_option("--max_frames", tr.student.max_frames, "positional table size");

  IndexOpts ix;
  auto* i = app.add_subcommand("index", "encode a split's videos into a feature store");
  i->add_option("--checkpoint", ix.checkpoint, "trained checkpoint")->required();
  i->add_option("--corpus", ix.corpus, "corpus directory")->required();
  i->add_option("--split", ix.split, "train | val | test");
  i->add_option("--out", ix.out, "output directory (store.vfs)");

  SearchOpts se;
  auto* s = app.add_subcommand("search", "top-k videos for one text of the corpus");
  s->add_option("--checkpoint", se.checkpoint, "trained checkpoint")->required();
  s->add_option("--store", se.store, "feature store")->required();
  s->add_option("--corpus", se.corpus, "corpus directory")->required();
  s->add_option("--split", se.split, "split holding the query text");
  s->add_option("--text", se.text, "query text id")->required();
  s->add_option("--k", se.k, "results to return");
  s->add_option("--shards", se.shards, "store partitions searched independently");
  s->add_option("--out", se.out, "output directory (results.json)");

  EvalOpts ev;
  auto* e = app.add_subcommand("eval", "text-to-video retrieval metrics");
  e->add_option("--checkpoint", ev.checkpoint, "trained checkpoint")->required();
  e->add_option("--store", ev.store, "feature store of the same split")->required();
  e->add_option("--corpus", ev.corpus, "corpus directory")->required();
  e->add_option("--split", ev.split, "train | val | test");
  e->add_option("--out", ev.out, "output directory (report.json)");

  CostOpts co;
  auto* c = app.add_subcommand("cost", "FLOPs per pair and bytes per video by method");
  c->add_option("--m", co.m, "frames per video");
  c->add_option("--d", co.d, "feature dim");
  c->add_option("--words", co.words, "text tokens for word-level methods");
  c->add_option("--spec", co.spec_files, "extra JSON method spec (repeatable)");
  c->add_option("--out", co.out, "output directory (cost.txt, cost.json)");

  GradOpts gr;
  auto* gc = app.add_subcommand("gradcheck", "whole-network gradient check of the composed loss");
  gc->set_help_flag("--help", "Print this help message and exit");  // frees -h for the step size
  gc->add_option("--seeds", gr.seeds, "number of seeds");
  gc->add_option("--seed", gr.seed, "first seed");
  gc->add_option("--d", gr.check.d, "feature dim");
  gc->add_option("--m", gr.check.m, "frames");
  gc->add_option("--layers", gr.check.layers, "temporal blocks");
  gc->add_option("--b", gr.check.b, "batch size");
  gc->add_option("--heads", gr.check.heads, "attention heads");
  gc->add_option("--h", gr.check.h, "central-difference step");
  gc->add_option("--tolerance", gr.tolerance, "maximum accepted relative error");
  gc->add_option("--out", gr.out, "output directory (gradcheck.json)");

  DistillOpts di;
  auto* d = app.add_subcommand("distill-report", "IN-only vs fully taught students across seeds");
  d->add_option("--seeds", di.seeds, "seeds 1..N");
  d->add_option("--epochs", di.config.train.epochs, "epochs per arm");
  d->add_option("--learning_rate", di.config.train.learning_rate, "base learning rate");
  d->add_option("--batch_size", di.config.train.batch_size, "pairs per batch");
  d->add_option("--layers", di.config.student.layers, "temporal blocks L");
  add_manifest_flags(d, di.config.manifest);
  d->add_option("--out", di.out, "output directory (distill.txt, distill.json)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& ex) {
    return app.exit(ex);
  } catch (const CLI::CallForAllHelp& ex) {
    return app.exit(ex);
  } catch (const CLI::CallForVersion& ex) {
    return app.exit(ex);
  } catch (const CLI::ParseError& ex) {
    return report_error("usage", ex.what());
  }

  RunContext ctx;
  for (int k = 0; k < argc; ++k) ctx.command_line += (k ? " " : "") + std::string(argv[k]);
  ctx.config_text = app.config_to_str(true, false);
  ctx.started_at = utc_now();

  try {
    if (*g) run_gen(gen, ctx);
    else if (*t) run_train(tr, ctx);
    else if (*i) run_index(ix, ctx);
    else if (*s) run_search(se, ctx);
    else if (*e) run_eval(ev, ctx);
    else if (*c) run_cost(co, ctx);
    else if (*gc) run_gradcheck(gr, ctx);
    else if (*d) run_distill_report(di, ctx);
  } catch (const Error& ex) {
    return report_error(ex.kind(), ex.what());
  } catch (const std::exception& ex) {
    return report_error("internal", ex.what());
  }
  return 0;
}
