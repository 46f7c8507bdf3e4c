#include "babylm/cli.hpp"

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

#include <CLI11.hpp>
#include <json.hpp>

#include "babylm/analysis.hpp"
#include "babylm/config.hpp"
#include "babylm/finetune.hpp"
#include "babylm/io.hpp"
#include "babylm/mlsm.hpp"
#include "babylm/model.hpp"
#include "babylm/tokenizer.hpp"
#include "babylm/training.hpp"

namespace babylm::cli {

namespace {

namespace fs = std::filesystem;

struct CommonConfigArgs {
  std::string config_path;
  std::string profile;
  std::vector<std::string> sets;
};

void add_config_options(CLI::App* sub, CommonConfigArgs& args) {
  sub->add_option("--config", args.config_path, "key = value configuration file");
  sub->add_option("--profile", args.profile, "built-in preset: roberta, elc, or mlsm");
  sub->add_option("--set", args.sets, "override a config key, e.g. --set lr=1e-4")
      ->take_all();
}

cfg::Config resolve_config(const CommonConfigArgs& args) {
  cfg::Config c;
  if (!args.profile.empty()) cfg::apply_profile(c, args.profile);
  if (!args.config_path.empty()) c = cfg::load_config_file(args.config_path, c);
  for (const std::string& kv : args.sets) {
    const size_t eq = kv.find('=');
    if (eq == std::string::npos)
      throw cfg::UsageError("--set expects key=value, got '" + kv + "'");
    std::string key = kv.substr(0, eq);
    std::string value = kv.substr(eq + 1);
    auto strip = [](std::string& s) {
      while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.erase(s.begin());
      while (!s.empty() && (s.back() == ' ' || s.back() == '\t')) s.pop_back();
    };
    strip(key);
    strip(value);
    cfg::set_key(c, key, value);
  }
  return c;
}

void apply_threads(const cfg::Config& c) {
  int64_t threads = c.threads;
  if (threads <= 0) {
    if (const char* env = std::getenv("BABYLM_LAB_THREADS")) threads = std::atoll(env);
  }
#ifdef _OPENMP
  if (threads > 0) omp_set_num_threads(static_cast<int>(threads));
#else
  (void)threads;
#endif
}

// Every run leaves a re-parseable snapshot of its resolved configuration.
void write_snapshot(const cfg::Config& c, const std::string& target, bool target_is_dir,
                    const std::vector<std::string>& argv_echo) {
  std::string body = "# babylm-lab resolved configuration\n# command:";
  for (const auto& a : argv_echo) body += " " + a;
  body += "\n" + cfg::render_config(c);
  const std::string path =
      target_is_dir ? target + "/resolved_config.txt" : target + ".config.txt";
  if (target_is_dir) fs::create_directories(target);
  io::write_file_atomic(path, body);
}

eval::Task parse_task(const std::string& name) {
  if (name == "pos") return eval::Task::Pos;
  if (name == "ner") return eval::Task::Ner;
  if (name == "ntc") return eval::Task::Ntc;
  throw cfg::UsageError("unknown task '" + name + "' (expected pos, ner, or ntc)");
}

struct TokenSplit {
  eval::TokenTaskDataset train, test;
};
struct SeqSplit {
  eval::SeqTaskDataset train, test;
};

TokenSplit load_token_data(const std::string& path, bool validate_bio) {
  TokenSplit out;
  if (fs::is_directory(path)) {
    const std::string train_p = path + "/train.conll";
    const std::string test_p = path + "/test.conll";
    if (!fs::exists(train_p)) throw std::runtime_error("missing " + train_p);
    out.train = eval::load_conll(train_p, validate_bio);
    if (fs::exists(test_p)) {
      out.test = eval::load_conll(test_p, validate_bio);
      return out;
    }
  } else {
    out.train = eval::load_conll(path, validate_bio);
  }
  // Deterministic 80/10/10 split of the training sentences. Tiny datasets can
  // hash into an empty test bucket; move the last training sentence over.
  auto split = eval::split_indices(out.train.sentences.size());
  if (split.test.empty() && split.train.size() > 1) {
    split.test.push_back(split.train.back());
    split.train.pop_back();
  }
  eval::TokenTaskDataset train, test;
  for (size_t i : split.train) train.sentences.push_back(out.train.sentences[i]);
  for (size_t i : split.test) test.sentences.push_back(out.train.sentences[i]);
  train.label_set = out.train.label_set;
  test.label_set = out.train.label_set;
  train.bio_violations = out.train.bio_violations;
  out.train = std::move(train);
  out.test = std::move(test);
  return out;
}

SeqSplit load_seq_data(const std::string& path) {
  SeqSplit out;
  if (fs::is_directory(path)) {
    const std::string train_p = path + "/train.tsv";
    const std::string test_p = path + "/test.tsv";
    if (!fs::exists(train_p)) throw std::runtime_error("missing " + train_p);
    out.train = eval::load_tsv_classification(train_p);
    if (fs::exists(test_p)) {
      out.test = eval::load_tsv_classification(test_p);
      return out;
    }
  } else {
    out.train = eval::load_tsv_classification(path);
  }
  auto split = eval::split_indices(out.train.examples.size());
  if (split.test.empty() && split.train.size() > 1) {
    split.test.push_back(split.train.back());
    split.train.pop_back();
  }
  eval::SeqTaskDataset train, test;
  for (size_t i : split.train) train.examples.push_back(out.train.examples[i]);
  for (size_t i : split.test) test.examples.push_back(out.train.examples[i]);
  train.label_set = out.train.label_set;
  test.label_set = out.train.label_set;
  out.train = std::move(train);
  out.test = std::move(test);
  return out;
}

// ------------------------------------------------------------ subcommands

int run_train_tokenizer(const std::string& kind, const std::string& corpus_path,
                        int64_t vocab_size, int64_t mask_tokens, const std::string& out,
                        const cfg::Config& c, const std::vector<std::string>& argv_echo) {
  auto corpus = train::ingest_corpus(corpus_path);
  if (corpus.docs.empty()) throw std::runtime_error("empty corpus: " + corpus_path);
  tok::Tokenizer t;
  if (kind == "bpe") {
    t = tok::bpe_train(corpus.docs, vocab_size);
  } else if (kind == "wordpiece") {
    t = tok::wordpiece_train(corpus.docs, vocab_size, tok::TokenizerKind::WordPiece);
  } else if (kind == "wordpiece-byte-digits") {
    t = tok::wordpiece_train(corpus.docs, vocab_size, tok::TokenizerKind::WordPieceByteDigits);
  } else {
    throw cfg::UsageError("unknown tokenizer kind '" + kind + "'");
  }
  if (mask_tokens > 0) {
    if (kind == "bpe") throw cfg::UsageError("--mask-tokens applies to wordpiece tokenizers");
    tok::augment_mask_tokens(t, mask_tokens);
  }
  tok::save_tokenizer(t, out);
  write_snapshot(c, out, false, argv_echo);
  std::printf("trained %s tokenizer: vocab %lld (%lld docs, %lld words)\n", kind.c_str(),
              static_cast<long long>(t.vocab_size()), static_cast<long long>(corpus.docs.size()),
              static_cast<long long>(corpus.word_count));
  return 0;
}

int run_pretrain(const cfg::Config& c, const std::string& corpus_path, const std::string& out_dir,
                 bool resume, const std::vector<std::string>& argv_echo) {
  if (c.tokenizer.empty())
    throw cfg::UsageError("pretrain needs a tokenizer (config key 'tokenizer')");
  auto tokenizer = tok::load_tokenizer(c.tokenizer);
  auto corpus = train::ingest_corpus(corpus_path);

  train::PretrainJob job;
  job.cfg = cfg::to_pretrain_config(c);
  job.out_dir = out_dir;
  job.normalize_hiddens = c.dict_normalize;

  model::Model m;
  model::Model teacher;
  mlsm::SemanticDictionary dict;
  const bool mlsm_mode = job.cfg.objective == train::Objective::MlsmStudent;
  if (mlsm_mode) {
    if (c.teacher_checkpoint.empty() || c.dictionary.empty())
      throw cfg::UsageError(
          "mlsm pretraining needs config keys 'teacher_checkpoint' and 'dictionary'");
    teacher = model::load_checkpoint(c.teacher_checkpoint);
    dict = mlsm::load_dictionary(c.dictionary);
    job.teacher = &teacher;
    job.dict = &dict;
  }

  if (resume) {
    m = model::load_checkpoint(out_dir + "/model.ckpt");
    job.resume = train::load_train_state(out_dir + "/train_state.bin");
  } else {
    Rng rng(c.seed);
    model::ModelConfig mc = cfg::to_model_config(c, tokenizer.vocab_size());
    m = model::make_model(mc, rng);
    if (mlsm_mode) {
      model::add_latent_head(m, dict.k, rng);
    } else {
      model::add_mlm_head(m, rng);
    }
  }

  write_snapshot(c, out_dir, true, argv_echo);
  auto res = train::pretrain(m, tokenizer, corpus, job);
  std::printf("pretrain done: %lld steps, loss ema %.6f, %zu checkpoint(s) in %s\n",
              static_cast<long long>(res.state.global_step), res.state.loss_ema,
              res.checkpoints.size() + 1, out_dir.c_str());
  return 0;
}

int run_build_dictionary(const cfg::Config& c, const std::string& corpus_path,
                         const std::string& out, const std::vector<std::string>& argv_echo) {
  if (c.teacher_checkpoint.empty())
    throw cfg::UsageError("build-dictionary needs config key 'teacher_checkpoint'");
  if (c.tokenizer.empty()) throw cfg::UsageError("build-dictionary needs config key 'tokenizer'");
  auto teacher = model::load_checkpoint(c.teacher_checkpoint);
  auto tokenizer = tok::load_tokenizer(c.tokenizer);
  auto corpus = train::ingest_corpus(corpus_path);

  std::vector<std::vector<int32_t>> doc_tokens;
  for (const auto& doc : corpus.docs) doc_tokens.push_back(tokenizer.encode(doc));
  auto sequences = train::pack_sequences(doc_tokens, teacher.cfg.max_seq_len);
  if (sequences.empty()) throw std::runtime_error("no training data");

  const int64_t layer = c.dict_layer >= 0 ? c.dict_layer : teacher.cfg.num_layers / 2;
  Rng rng(c.seed);
  Tensor hiddens = mlsm::collect_hidden(teacher, sequences, layer, c.dict_samples, rng);
  if (hiddens.rows() == 0) throw std::runtime_error("no hidden vectors collected");
  if (c.dict_normalize) mlsm::normalize_rows(hiddens);
  auto res = mlsm::dict_learn(hiddens, c.dict_k, c.dict_lambda, c.dict_iterations, rng);
  res.dict.teacher_layer = layer;
  mlsm::save_dictionary(res.dict, out);
  write_snapshot(c, out, false, argv_echo);
  std::printf("dictionary: k=%lld d=%lld layer=%lld lambda=%g rows=%lld objective %.6f -> %.6f\n",
              static_cast<long long>(res.dict.k), static_cast<long long>(res.dict.dim),
              static_cast<long long>(layer), res.dict.lambda,
              static_cast<long long>(hiddens.rows()), res.objective.front(),
              res.objective.back());
  return 0;
}

int run_finetune(const cfg::Config& c, const std::string& task_name,
                 const std::string& checkpoint, const std::string& data_path,
                 const std::string& out, const std::string& save_model,
                 const std::vector<std::string>& argv_echo) {
  if (c.tokenizer.empty()) throw cfg::UsageError("finetune needs config key 'tokenizer'");
  const eval::Task task = parse_task(task_name);
  auto tokenizer = tok::load_tokenizer(c.tokenizer);
  auto pretrained = model::load_checkpoint(checkpoint);

  eval::FinetuneOptions opts;
  opts.epochs = c.ft_epochs;
  opts.lr = c.ft_lr;
  opts.batch_size = c.ft_batch_size;
  opts.weight_decay = c.weight_decay;
  opts.grad_clip = c.grad_clip;
  opts.warmup_fraction = c.warmup_fraction;
  opts.save_model_path = save_model;
  opts.seeds.clear();
  for (int64_t i = 0; i < c.ft_seeds; ++i) opts.seeds.push_back(c.seed + static_cast<uint64_t>(i));

  eval::EvalReport report;
  if (task == eval::Task::Ntc) {
    auto data = load_seq_data(data_path);
    report = eval::finetune_seq_task(pretrained, tokenizer, data.train, data.test, opts);
  } else {
    auto data = load_token_data(data_path, task == eval::Task::Ner);
    for (const auto& v : data.train.bio_violations)
      std::fprintf(stderr, "bio violation: %s\n", v.c_str());
    report = eval::finetune_token_task(pretrained, tokenizer, data.train, data.test, task, opts);
  }
  io::write_file_atomic(out, eval::report_jsonl(report));
  write_snapshot(c, out, false, argv_echo);
  std::printf("%s %s: mean %.4f std %.4f over %zu seed(s)\n", report.task.c_str(),
              report.metric.c_str(), report.mean, report.std_dev, report.scores.size());
  return 0;
}

int run_evaluate(const cfg::Config& c, const std::string& task_name,
                 const std::string& checkpoint, const std::string& data_path,
                 const std::string& out, const std::vector<std::string>& argv_echo) {
  if (c.tokenizer.empty()) throw cfg::UsageError("evaluate needs config key 'tokenizer'");
  const eval::Task task = parse_task(task_name);
  auto tokenizer = tok::load_tokenizer(c.tokenizer);
  auto m = model::load_checkpoint(checkpoint);

  double score = 0.0;
  if (task == eval::Task::Ntc) {
    auto data = load_seq_data(data_path);
    score = eval::evaluate_seq_task(m, tokenizer, data.test, data.train.label_set);
  } else {
    auto data = load_token_data(data_path, task == eval::Task::Ner);
    score = eval::evaluate_token_task(m, tokenizer, data.test, task, data.train.label_set);
  }
  nlohmann::json j;
  j["task"] = task_name;
  j["metric"] = eval::task_metric(task);
  j["score"] = score;
  io::write_file_atomic(out, j.dump(2) + "\n");
  write_snapshot(c, out, false, argv_echo);
  std::printf("%s %s: %.4f\n", task_name.c_str(), eval::task_metric(task).c_str(), score);
  return 0;
}

int run_analyze_layers(const cfg::Config& c, const std::string& checkpoint,
                       const std::string& csv, const std::string& svg,
                       const std::vector<std::string>& argv_echo) {
  auto m = model::load_checkpoint(checkpoint);
  auto matrix = analysis::extract_layer_weights(m);
  analysis::export_heatmap_csv(matrix, csv);
  if (!svg.empty()) analysis::export_heatmap_svg(matrix, svg);
  write_snapshot(c, csv, false, argv_echo);
  std::printf("layer weights: %zu rows -> %s%s%s\n", matrix.rows.size(), csv.c_str(),
              svg.empty() ? "" : " and ", svg.c_str());
  return 0;
}

int run_analyze_semantics(const cfg::Config& c, const std::string& checkpoint,
                          const std::string& dict_path, const std::string& targets_path,
                          int64_t top, const std::string& out,
                          const std::vector<std::string>& argv_echo) {
  if (c.tokenizer.empty())
    throw cfg::UsageError("analyze-semantics needs config key 'tokenizer'");
  auto m = model::load_checkpoint(checkpoint);
  auto tokenizer = tok::load_tokenizer(c.tokenizer);
  auto dict = mlsm::load_dictionary(dict_path);

  std::vector<analysis::OverlapTarget> targets;
  const std::string text = io::read_file(targets_path);
  size_t start = 0;
  int64_t line_no = 0;
  while (start <= text.size()) {
    size_t end = text.find('\n', start);
    if (end == std::string::npos) end = text.size();
    std::string line = text.substr(start, end - start);
    if (!line.empty() && line.back() == '\r') line.pop_back();
    ++line_no;
    if (!line.empty()) {
      const size_t t1 = line.find('\t');
      const size_t t2 = t1 == std::string::npos ? std::string::npos : line.find('\t', t1 + 1);
      if (t1 == std::string::npos || t2 == std::string::npos)
        throw std::runtime_error("targets line " + std::to_string(line_no) +
                                 ": expected word<TAB>sentence<TAB>group");
      targets.push_back({line.substr(0, t1), line.substr(t1 + 1, t2 - t1 - 1),
                         line.substr(t2 + 1)});
    }
    if (end == text.size()) break;
    start = end + 1;
  }

  auto report = analysis::overlap_report(m, tokenizer, dict, targets, top);
  io::write_file_atomic(out, analysis::overlap_report_json(report));
  write_snapshot(c, out, false, argv_echo);
  std::printf("semantic overlap: %zu targets, within-group mean %.2f, cross-group mean %.2f\n",
              targets.size(), report.within_group_mean, report.cross_group_mean);
  return 0;
}

int run_grad_check(const std::string& objective, double eps) {
  std::vector<train::Objective> objectives;
  if (objective == "all") {
    objectives = {train::Objective::MlmStandard, train::Objective::MlmElc,
                  train::Objective::MlsmStudent};
  } else {
    objectives = {cfg::objective_from_string(objective)};
  }
  bool ok = true;
  for (auto obj : objectives) {
    const auto res = train::grad_check_objective(obj, eps);
    const bool pass = res.max_rel_err < 1e-3;
    ok = ok && pass;
    std::printf("%-5s max relative error %.3e over %lld coords (worst %s) %s\n",
                train::objective_name(obj).c_str(), res.max_rel_err,
                static_cast<long long>(res.coords_checked), res.worst_param.c_str(),
                pass ? "OK" : "FAIL");
  }
  if (!ok) throw std::runtime_error("gradient check failed");
  return 0;
}

}  // namespace

int cli_main(int argc, const char* const* argv) {
  CLI::App app{"babylm-lab: desk-scale masked language modelling laboratory"};
  app.require_subcommand(1);

  std::vector<std::string> argv_echo;
  for (int i = 0; i < argc; ++i) argv_echo.emplace_back(argv[i]);

  // train-tokenizer
  auto* tt = app.add_subcommand("train-tokenizer", "Train a subword tokenizer");
  std::string tt_kind = "wordpiece", tt_corpus, tt_out;
  int64_t tt_vocab = 8000, tt_mask = 0;
  CommonConfigArgs tt_cfg;
  tt->add_option("--kind", tt_kind, "bpe | wordpiece | wordpiece-byte-digits");
  tt->add_option("--corpus", tt_corpus, "corpus file, one document per line")->required();
  tt->add_option("--vocab-size", tt_vocab, "target vocabulary size");
  tt->add_option("--mask-tokens", tt_mask, "append k [MASK-n] tokens (wordpiece kinds)");
  tt->add_option("--out", tt_out, "output tokenizer file")->required();
  add_config_options(tt, tt_cfg);

  // pretrain
  auto* pt = app.add_subcommand("pretrain", "Run a pretraining objective");
  std::string pt_objective, pt_corpus, pt_out, pt_tokenizer, pt_teacher, pt_dict;
  bool pt_resume = false;
  CommonConfigArgs pt_cfg;
  pt->add_option("--objective", pt_objective, "mlm | elc | mlsm (overrides config)");
  pt->add_option("--corpus", pt_corpus, "corpus file")->required();
  pt->add_option("--out", pt_out, "output run directory")->required();
  pt->add_option("--tokenizer", pt_tokenizer, "tokenizer file (sets config key)");
  pt->add_option("--teacher", pt_teacher, "teacher checkpoint (mlsm)");
  pt->add_option("--dict", pt_dict, "semantic dictionary file (mlsm)");
  pt->add_flag("--resume", pt_resume, "continue from out-dir model.ckpt + train_state.bin");
  add_config_options(pt, pt_cfg);

  // build-dictionary
  auto* bd = app.add_subcommand("build-dictionary", "Learn a semantic dictionary from a teacher");
  std::string bd_corpus, bd_out, bd_teacher, bd_tokenizer;
  CommonConfigArgs bd_cfg;
  bd->add_option("--corpus", bd_corpus, "corpus file")->required();
  bd->add_option("--teacher", bd_teacher, "teacher checkpoint (sets config key)");
  bd->add_option("--tokenizer", bd_tokenizer, "tokenizer file (sets config key)");
  bd->add_option("--out", bd_out, "output dictionary file")->required();
  add_config_options(bd, bd_cfg);

  // finetune
  auto* ft = app.add_subcommand("finetune", "Finetune and evaluate on a downstream task");
  std::string ft_task, ft_ckpt, ft_data, ft_out, ft_tokenizer, ft_save;
  int64_t ft_seeds = -1, ft_epochs = -1;
  CommonConfigArgs ft_cfg;
  ft->add_option("--task", ft_task, "pos | ner | ntc")->required();
  ft->add_option("--checkpoint", ft_ckpt, "pretrained checkpoint")->required();
  ft->add_option("--data", ft_data, "dataset file or directory")->required();
  ft->add_option("--tokenizer", ft_tokenizer, "tokenizer file (sets config key)");
  ft->add_option("--seeds", ft_seeds, "number of finetuning seeds");
  ft->add_option("--epochs", ft_epochs, "finetuning epochs per seed");
  ft->add_option("--save-model", ft_save, "save the first seed's finetuned checkpoint");
  ft->add_option("--out", ft_out, "report file (json lines)")->required();
  add_config_options(ft, ft_cfg);

  // evaluate
  auto* ev = app.add_subcommand("evaluate", "Score a finetuned checkpoint on a dataset");
  std::string ev_task, ev_ckpt, ev_data, ev_out, ev_tokenizer;
  CommonConfigArgs ev_cfg;
  ev->add_option("--task", ev_task, "pos | ner | ntc")->required();
  ev->add_option("--checkpoint", ev_ckpt, "finetuned checkpoint")->required();
  ev->add_option("--data", ev_data, "dataset file or directory")->required();
  ev->add_option("--tokenizer", ev_tokenizer, "tokenizer file (sets config key)");
  ev->add_option("--out", ev_out, "report file (json)")->required();
  add_config_options(ev, ev_cfg);

  // analyze-layers
  auto* al = app.add_subcommand("analyze-layers", "Export ELC layer-contribution heatmaps");
  std::string al_ckpt, al_csv, al_svg;
  CommonConfigArgs al_cfg;
  al->add_option("--checkpoint", al_ckpt, "elc checkpoint")->required();
  al->add_option("--csv", al_csv, "output csv path")->required();
  al->add_option("--svg", al_svg, "optional svg heatmap path");
  add_config_options(al, al_cfg);

  // analyze-semantics
  auto* as = app.add_subcommand("analyze-semantics", "Top-k semantic categories and overlaps");
  std::string as_ckpt, as_dict, as_targets, as_out, as_tokenizer;
  int64_t as_top = 10;
  CommonConfigArgs as_cfg;
  as->add_option("--checkpoint", as_ckpt, "student checkpoint")->required();
  as->add_option("--dict", as_dict, "semantic dictionary file")->required();
  as->add_option("--targets", as_targets, "tsv: word<TAB>sentence<TAB>group")->required();
  as->add_option("--tokenizer", as_tokenizer, "tokenizer file (sets config key)");
  as->add_option("--top", as_top, "profile size T");
  as->add_option("--out", as_out, "report file (json)")->required();
  add_config_options(as, as_cfg);

  // grad-check
  auto* gc = app.add_subcommand("grad-check", "Finite-difference check of all loss paths");
  std::string gc_objective = "all";
  double gc_eps = 2e-3;
  gc->add_option("--objective", gc_objective, "all | mlm | elc | mlsm");
  gc->add_option("--eps", gc_eps, "central-difference step");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << e.what() << "\n" << app.help() << std::flush;
    return 1;
  }

  try {
    if (tt->parsed()) {
      auto c = resolve_config(tt_cfg);
      apply_threads(c);
      return run_train_tokenizer(tt_kind, tt_corpus, tt_vocab, tt_mask, tt_out, c, argv_echo);
    }
    if (pt->parsed()) {
      auto c = resolve_config(pt_cfg);
      if (!pt_objective.empty()) cfg::set_key(c, "objective", pt_objective);
      if (!pt_tokenizer.empty()) c.tokenizer = pt_tokenizer;
      if (!pt_teacher.empty()) c.teacher_checkpoint = pt_teacher;
      if (!pt_dict.empty()) c.dictionary = pt_dict;
      apply_threads(c);
      return run_pretrain(c, pt_corpus, pt_out, pt_resume, argv_echo);
    }
    if (bd->parsed()) {
      auto c = resolve_config(bd_cfg);
      if (!bd_teacher.empty()) c.teacher_checkpoint = bd_teacher;
      if (!bd_tokenizer.empty()) c.tokenizer = bd_tokenizer;
      apply_threads(c);
      return run_build_dictionary(c, bd_corpus, bd_out, argv_echo);
    }
    if (ft->parsed()) {
      auto c = resolve_config(ft_cfg);
      if (!ft_tokenizer.empty()) c.tokenizer = ft_tokenizer;
      if (ft_seeds > 0) c.ft_seeds = ft_seeds;
      if (ft_epochs > 0) c.ft_epochs = ft_epochs;
      apply_threads(c);
      return run_finetune(c, ft_task, ft_ckpt, ft_data, ft_out, ft_save, argv_echo);
    }
    if (ev->parsed()) {
      auto c = resolve_config(ev_cfg);
      if (!ev_tokenizer.empty()) c.tokenizer = ev_tokenizer;
      apply_threads(c);
      return run_evaluate(c, ev_task, ev_ckpt, ev_data, ev_out, argv_echo);
    }
    if (al->parsed()) {
      auto c = resolve_config(al_cfg);
      apply_threads(c);
      return run_analyze_layers(c, al_ckpt, al_csv, al_svg, argv_echo);
    }
    if (as->parsed()) {
      auto c = resolve_config(as_cfg);
      if (!as_tokenizer.empty()) c.tokenizer = as_tokenizer;
      apply_threads(c);
      return run_analyze_semantics(c, as_ckpt, as_dict, as_targets, as_top, as_out, argv_echo);
    }
    if (gc->parsed()) {
      return run_grad_check(gc_objective, gc_eps);
    }
  } catch (const cfg::UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}

}  // namespace babylm::cli
