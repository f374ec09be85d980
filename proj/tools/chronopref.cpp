// chronopref command-line front end.
//
// Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "chronopref/agents.hpp"
#include "chronopref/design.hpp"
#include "chronopref/econometrics.hpp"
#include "chronopref/estimation.hpp"
#include "chronopref/http_transport.hpp"
#include "chronopref/prompting.hpp"
#include "chronopref/report.hpp"
#include "chronopref/run.hpp"
#include "chronopref/storage.hpp"
#include "chronopref/topics/lda.hpp"
#include "chronopref/topics/prevalence.hpp"
#include "chronopref/topics/text.hpp"
#include "chronopref/util/csv.hpp"
#include "chronopref/util/text.hpp"

#ifndef CHRONOPREF_ASSET_DIR
#define CHRONOPREF_ASSET_DIR "assets"
#endif

namespace fs = std::filesystem;
using namespace chronopref;

namespace {

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

LanguageRegistry load_registry(const fs::path& assets) {
  const auto path = assets / "languages.json";
  return fs::exists(path) ? LanguageRegistry::load(path.string()) : LanguageRegistry::builtin();
}

std::vector<Language> select_languages(const LanguageRegistry& reg, const std::string& selection) {
  try {
    return reg.select(selection);
  } catch (const std::exception& e) {
    throw UsageError(e.what());
  }
}

void write_text(const fs::path& path, const std::string& text) {
  fs::create_directories(path.parent_path().empty() ? fs::path(".") : path.parent_path());
  util::write_file(path.string(), text);
}

void write_csv(const fs::path& path, const util::CsvTable& t) {
  fs::create_directories(path.parent_path().empty() ? fs::path(".") : path.parent_path());
  t.save(path.string());
}

// ---------------------------------------------------------------- run inputs

struct LoadedRun {
  RunManifest manifest;
  std::vector<ExperimentCell> grid;
  std::vector<SampleRecord> log;
};

LoadedRun load_run(const fs::path& dir, const LanguageRegistry& reg) {
  if (!RunStore::exists(dir)) throw UsageError("not a run directory (no manifest.json): " + dir.string());
  auto store = RunStore::open(dir);
  LoadedRun r{store.manifest(), {}, store.read_samples()};
  std::vector<Language> langs;
  for (const auto& code : r.manifest.languages) langs.push_back(reg.at(code));
  r.grid = build_grid(r.manifest.grid_kind, langs);
  if (grid_hash(r.grid) != r.manifest.grid_hash)
    throw UsageError("run " + dir.string() + " was planned on a grid that the language registry no longer reproduces");
  if (r.log.empty()) throw UsageError("run has no samples: " + dir.string());
  return r;
}

std::vector<AnalysisRow> load_rows(const std::vector<std::string>& dirs, const LanguageRegistry& reg) {
  if (dirs.empty()) throw UsageError("at least one --run directory is required");
  std::vector<AnalysisRow> rows;
  for (const auto& d : dirs) {
    const auto run = load_run(d, reg);
    const auto ex = export_analysis(run.log, run.grid, run.manifest.study);
    auto part = parse_analysis(ex.table);
    rows.insert(rows.end(), part.begin(), part.end());
  }
  if (rows.empty()) throw UsageError("the runs contain no parsed choices");
  return rows;
}

std::pair<std::vector<AnalysisRow>, std::vector<AnalysisRow>> split_by_kind(const std::vector<AnalysisRow>& rows) {
  std::vector<AnalysisRow> cross, same;
  for (const auto& r : rows) (r.same_period() ? same : cross).push_back(r);
  return {cross, same};
}

// ---------------------------------------------------------------- grid

struct GridArgs {
  std::string assets = CHRONOPREF_ASSET_DIR;
  std::string languages = "all";
  bool same_period = false;
  std::string out = "grid";
};

int cmd_grid(const GridArgs& a) {
  const auto reg = load_registry(a.assets);
  const auto langs = select_languages(reg, a.languages);
  const auto kind = a.same_period ? GridKind::SamePeriod : GridKind::CrossPeriod;
  const auto grid = build_grid(kind, langs);
  const fs::path out(a.out);
  write_csv(out / "grid.csv", grid_to_csv(grid));
  std::string table;
  if (kind == GridKind::CrossPeriod) {
    table = render_reward_table();
  } else {
    table = "Same-period pairs: both rewards delivered t months from now\n  t  |  r1  |  r2\n";
    for (std::size_t k = 0; k < kSamePeriodMonths.size(); ++k) {
      char buf[64];
      std::snprintf(buf, sizeof buf, "%4d | %4lld | %5lld\n", kSamePeriodMonths[k], static_cast<long long>(kBaseReward),
                    static_cast<long long>(kSamePeriodRewards[k]));
      table += buf;
    }
  }
  write_text(out / "reward_table.txt", table);
  std::cout << grid.size() << " cells (" << to_string(kind) << ", " << langs.size() << " languages)\n"
            << "grid hash " << grid_hash(grid) << "\n"
            << "wrote " << (out / "grid.csv").string() << " and " << (out / "reward_table.txt").string() << "\n";
  return 0;
}

// ---------------------------------------------------------------- run

struct RunArgs {
  std::string assets = CHRONOPREF_ASSET_DIR;
  std::string out;
  std::string run_id;
  std::string study;
  std::string protocol = "standard";
  std::string languages = "all";
  bool same_period = false;
  int samples_per_cell = 100;
  std::string simulated;  // population name or path
  std::string model = "gpt-4";
  std::string endpoint = "https://api.openai.com/v1/chat/completions";
  std::string api_key_env = "OPENAI_API_KEY";
  double temperature = 1.0;
  int max_output_tokens = 0;
  int max_in_flight = 4;
  int retry_max = 3;
  int backoff_ms = 500;
  int timeout_s = 60;
  long long budget = 0;
  std::uint64_t seed = 20240101;
  std::string unit = "tokens";
  int refusal_cap = 3;
  long long stop_after = 0;
  bool quiet = false;
};

fs::path resolve_population(const std::string& name, const fs::path& assets) {
  if (fs::exists(name)) return name;
  const auto p = assets / "populations" / (name + ".json");
  if (fs::exists(p)) return p;
  throw UsageError("unknown population '" + name + "' (not a file, not in " + (assets / "populations").string() + ")");
}

int cmd_run(const RunArgs& a) {
  if (a.out.empty()) throw UsageError("--out is required");
  if (a.samples_per_cell <= 0) throw UsageError("--samples-per-cell must be > 0");
  const fs::path assets(a.assets);
  const auto reg = load_registry(assets);
  const auto langs = select_languages(reg, a.languages);
  const bool live = a.simulated.empty();

  RunManifest m;
  m.run_id = a.run_id.empty() ? fs::path(a.out).filename().string() : a.run_id;
  if (m.run_id.empty()) m.run_id = "run";
  try {
    m.protocol = parse_protocol(a.protocol);
    m.study = a.study.empty() ? (live ? (m.protocol == ProtocolVariant::ChainOfThought ? Study::CoTGpt4
                                                                                        : Study::StandardGpt4)
                                      : Study::Simulated)
                              : parse_study(a.study);
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  if (m.study == Study::CoTGpt4) m.protocol = ProtocolVariant::ChainOfThought;
  m.grid_kind = (a.same_period || m.study == Study::SamePeriod) ? GridKind::SamePeriod : GridKind::CrossPeriod;
  m.samples_per_cell = a.samples_per_cell;
  m.model_id = live ? a.model : "simulated";
  m.seed = a.seed;
  m.unit = a.unit;

  Respondent who;
  const auto template_root = assets / "templates";
  for (const auto& l : langs) {
    auto p = PromptSet::load(template_root, l.code);
    if (live && p.fallback && l.code != "english")
      throw UsageError("no prompt templates for " + l.code + " under " + template_root.string() +
                       "; run translate-templates first");
    who.prompts.emplace(l.code, std::move(p));
  }
  if (live) {
    ClientConfig cfg;
    cfg.endpoint = a.endpoint;
    cfg.model_id = a.model;
    cfg.temperature = a.temperature;
    if (a.max_output_tokens > 0) cfg.max_output_tokens = a.max_output_tokens;
    cfg.api_key_env = a.api_key_env;
    cfg.policy.max_in_flight = a.max_in_flight;
    cfg.policy.retry_max = a.retry_max;
    cfg.policy.backoff_base = std::chrono::milliseconds(a.backoff_ms);
    cfg.policy.timeout = std::chrono::seconds(a.timeout_s);
    if (a.budget > 0) cfg.token_budget = a.budget;
    try {
      who.client = make_live_client(cfg);
    } catch (const ConfigError& e) {
      throw UsageError(e.what());
    } catch (const std::invalid_argument& e) {
      throw UsageError(e.what());
    }
  } else {
    who.population = Population::load(resolve_population(a.simulated, assets).string());
  }

  const auto refusal_path = assets / "refusal_phrases.txt";
  const auto refusals =
      fs::exists(refusal_path) ? RefusalPhrases::parse(util::read_file(refusal_path.string())) : RefusalPhrases::defaults();

  RunOptions opts;
  opts.refusal_cap = a.refusal_cap;
  if (a.stop_after > 0) opts.stop_after = static_cast<std::size_t>(a.stop_after);
  if (!a.quiet) {
    opts.progress = [step = std::size_t{0}](std::size_t done, std::size_t total, const TokenUsage& u) mutable {
      const std::size_t every = std::max<std::size_t>(1, total / 10);
      if (done == total || done / every != step) {
        step = done / every;
        std::fprintf(stderr, "  %zu/%zu samples, %lld tokens\n", done, total, static_cast<long long>(u.total()));
      }
    };
  }

  RunResult res;
  try {
    res = execute_run(a.out, m, langs, who, refusals, opts);
  } catch (const StorageError& e) {
    // resume mismatches are configuration problems; I/O failures are not
    if (std::string(e.what()).find("refusing to resume") != std::string::npos) throw UsageError(e.what());
    throw;
  }
  std::cout << "run " << m.run_id << ": planned " << res.planned << ", appended " << res.appended << ", remaining "
            << res.remaining << "\n"
            << "parsed rows " << res.summary.rows << ", refusals " << res.summary.refusals << ", unparseable "
            << res.summary.unparseable << "\n";
  if (live) std::cout << "tokens in " << res.usage.input_tokens << ", out " << res.usage.output_tokens << "\n";
  if (res.budget_exhausted) {
    std::cerr << "token budget exhausted; the run directory is consistent and can be resumed\n";
    return 1;
  }
  if (res.stopped_early) std::cout << "stopped early on request; re-run the same command to resume\n";
  return 0;
}

// ---------------------------------------------------------------- estimate

struct AnalysisArgs {
  std::string assets = CHRONOPREF_ASSET_DIR;
  std::vector<std::string> runs;
  std::string out = "report";
};

DeltaEstimates write_estimates(const std::vector<AnalysisRow>& cross, const fs::path& out) {
  if (cross.empty()) throw UsageError("estimation needs cross-period choices");
  const auto est = estimate_deltas(cross);
  write_csv(out / "delta_estimates.csv", est.to_csv());
  const auto pts = est.plot_points();
  write_csv(out / "fig_delta.csv", plot_points_csv(pts, "delta"));
  write_text(out / "fig_delta.svg",
             render_dot_whisker_svg("Estimated discount rate by language", "delta (95% CI)", pts));
  return est;
}

void print_estimates(const DeltaEstimates& est) {
  std::printf("%-12s %-7s %10s %22s %8s\n", "group", "ftr", "delta", "95% CI", "n");
  auto line = [](const GroupFit& g) {
    if (!g.fit) {
      std::printf("%-12s %-7s   failed: %s\n", g.group.c_str(), std::string(to_string(g.ftr_class)).c_str(),
                  g.error.c_str());
      return;
    }
    std::printf("%-12s %-7s %10.4f   [%8.4f, %8.4f] %8zu\n", g.group.c_str(),
                std::string(to_string(g.ftr_class)).c_str(), g.fit->delta_hat, g.fit->ci95_delta.lo,
                g.fit->ci95_delta.hi, g.fit->n_obs);
  };
  for (const auto& g : est.pooled) line(g);
  for (const auto& g : est.per_language) line(g);
}

int cmd_estimate(const AnalysisArgs& a) {
  const auto reg = load_registry(a.assets);
  const auto [cross, same] = split_by_kind(load_rows(a.runs, reg));
  const auto est = write_estimates(cross, a.out);
  print_estimates(est);
  return 0;
}

// ---------------------------------------------------------------- regress

void write_table(const RegressionTable& t, const fs::path& out, const std::string& stem, bool echo) {
  write_text(out / (stem + ".txt"), t.render_text());
  write_csv(out / (stem + ".csv"), t.to_csv());
  if (echo) std::cout << t.render_text() << "\n";
}

int write_regressions(const std::vector<AnalysisRow>& rows, const fs::path& out, bool echo) {
  const auto [cross, same] = split_by_kind(rows);
  int written = 0;
  auto attempt = [&](const std::string& stem, auto make) {
    try {
      write_table(make(), out, stem, echo);
      ++written;
    } catch (const RegressionError& e) {
      std::cerr << stem << ": skipped (" << e.what() << ")\n";
    }
  };
  if (!cross.empty()) {
    attempt("table_ftr_share", [&] {
      return RegressionTable{"Share of later choices and future-time reference", "Choice of later option (=1)",
                             {}, spec_ftr_share(cross)};
    });
    attempt("table_proper_test", [&] {
      return RegressionTable{"Reward difference across periods", "Choice of larger reward (=1)", {},
                             spec_proper_test(cross, false)};
    });
  }
  if (!same.empty()) {
    attempt("table_same_period_test", [&] {
      return RegressionTable{"Reward difference within a period", "Choice of larger reward (=1)", {},
                             spec_proper_test(same, true)};
    });
  }
  return written;
}

int cmd_regress(const AnalysisArgs& a) {
  const auto reg = load_registry(a.assets);
  const auto rows = load_rows(a.runs, reg);
  if (write_regressions(rows, a.out, true) == 0) {
    std::cerr << "no regression could be estimated from these runs\n";
    return 1;
  }
  return 0;
}

// ---------------------------------------------------------------- topics

struct TopicsArgs {
  std::string assets = CHRONOPREF_ASSET_DIR;
  std::vector<std::string> runs;
  std::string documents;
  std::string out = "topics";
  int k = 4;
  int iterations = 1000;
  double alpha = 0.0;  // 0 = 50/K
  double beta = 0.01;
  std::uint64_t seed = 1;
  std::string labels;
  std::string stopwords;
  std::string context_stopwords;
  int top_n = 20;
};

int cmd_topics(const TopicsArgs& a) {
  using namespace chronopref::topics;
  const fs::path assets(a.assets), out(a.out);
  if (a.k < 1) throw UsageError("--k must be positive");
  const auto stop = StopwordList::load(a.stopwords.empty() ? (assets / "stopwords_en.txt").string() : a.stopwords);
  const auto ctx_path = a.context_stopwords.empty() ? assets / "context_stopwords.txt" : fs::path(a.context_stopwords);
  const auto context = fs::exists(ctx_path) ? StopwordList::load(ctx_path.string()) : StopwordList{};

  std::vector<Document> docs;
  std::map<std::string, DocCondition> cond_of;
  if (!a.documents.empty()) {
    if (!fs::exists(a.documents)) throw UsageError("documents file not found: " + a.documents);
    docs = documents_from_csv(util::CsvTable::load(a.documents));
  } else {
    if (a.runs.empty()) throw UsageError("give --run directories from chain-of-thought runs, or --documents");
    const auto reg = load_registry(assets);
    for (const auto& dir : a.runs) {
      const auto run = load_run(dir, reg);
      if (run.manifest.grid_kind != GridKind::CrossPeriod) continue;
      std::map<std::pair<std::size_t, int>, const SampleRecord*> latest;
      for (const auto& r : run.log)
        if (is_choice(r.outcome) && r.english_translation && !r.english_translation->empty())
          latest[{r.cell_index, r.slot}] = &r;
      for (const auto& [pos, r] : latest) {
        const auto& c = run.grid[pos.first];
        const auto ref = run.manifest.run_id + "/" + std::to_string(pos.first) + "/" + std::to_string(pos.second);
        docs.push_back({ref, *r->english_translation});
        cond_of[ref] = {c.language.code, c.language.strong_ftr(), c.delay_months, c.interest->str()};
      }
    }
  }
  if (docs.empty()) throw UsageError("no explanation texts found (topics needs chain-of-thought runs)");
  write_csv(out / "documents.csv", documents_to_csv(docs));

  const auto corpus = Corpus::build(docs, stop, context);
  if (corpus.docs.empty()) throw UsageError("every document is empty after preprocessing");
  LDAOptions opts;
  opts.K = a.k;
  if (a.alpha > 0.0) opts.alpha = a.alpha;
  opts.beta = a.beta;
  opts.iterations = a.iterations;
  opts.seed = a.seed;
  const auto model = fit_lda(corpus, opts);

  TopicLabeling labeling;
  if (!a.labels.empty()) {
    labeling = TopicLabeling::load(a.labels);
  } else if (fs::exists(assets / "topic_labels.json")) {
    labeling = TopicLabeling::load((assets / "topic_labels.json").string());
  } else {
    labeling = TopicLabeling::defaults();
  }
  if (static_cast<int>(labeling.merge_map.size()) != a.k) {
    if (!a.labels.empty()) throw UsageError("labeling file does not cover K=" + std::to_string(a.k) + " topics");
    labeling = {};
    for (int k = 0; k < a.k; ++k) {
      labeling.labels.push_back("Topic " + std::to_string(k + 1));
      labeling.merge_map.push_back(k);
    }
  }

  const auto words = top_words(model, static_cast<std::size_t>(a.top_n));
  write_text(out / "top_words.txt", render_top_words(words));
  write_csv(out / "topic_terms.csv", topic_terms_csv(model, static_cast<std::size_t>(a.top_n)));

  std::vector<std::string> theta_cols{"sample_ref"};
  for (int k = 0; k < a.k; ++k) theta_cols.push_back("topic_" + std::to_string(k + 1));
  for (const auto& l : labeling.labels) theta_cols.push_back(l);
  util::CsvTable theta_csv(theta_cols);
  std::vector<std::vector<double>> theta;
  std::vector<DocCondition> conds;
  for (std::size_t d = 0; d < corpus.docs.size(); ++d) {
    const auto t = infer_doc_topics(model, corpus.docs[d], util::mix_seed({a.seed, d})).theta;
    std::vector<std::string> row{corpus.doc_refs[d]};
    for (double v : t) row.push_back(util::exact(v));
    for (double v : labeling.merge(t)) row.push_back(util::exact(v));
    theta_csv.add_row(row);
    if (auto it = cond_of.find(corpus.doc_refs[d]); it != cond_of.end()) {
      theta.push_back(t);
      conds.push_back(it->second);
    }
  }
  write_csv(out / "doc_topics.csv", theta_csv);

  nlohmann::ordered_json summary;
  summary["documents"] = docs.size();
  summary["kept"] = corpus.docs.size();
  summary["excluded_empty"] = corpus.excluded_refs.size();
  summary["vocabulary"] = corpus.vocab.size();
  summary["tokens"] = corpus.num_tokens();
  summary["K"] = a.k;
  summary["alpha"] = model.alpha;
  summary["beta"] = model.beta;
  summary["iterations"] = a.iterations;
  summary["seed"] = a.seed;
  summary["log_likelihood"] = util::fixed(lda_log_likelihood(model), 4);
  summary["labeling"] = labeling.to_json();
  write_text(out / "topics_summary.json", summary.dump(2) + "\n");

  std::cout << render_top_words(words) << "\n"
            << corpus.docs.size() << " documents (" << corpus.excluded_refs.size() << " empty after preprocessing), "
            << corpus.vocab.size() << " terms\n";

  if (!conds.empty()) {
    const auto prev = prevalence_analytics(theta, labeling, conds);
    write_csv(out / "prevalence.csv", prev.groups_csv());
    for (const auto& [dimension, stem, title] :
         std::vector<std::tuple<std::string, std::string, std::string>>{
             {"interest", "fig_topics_by_interest", "Normalized topic prevalence by interest rate"},
             {"delay", "fig_topics_by_delay", "Normalized topic prevalence by delay (months)"},
             {"language", "fig_topics_by_language", "Normalized topic prevalence by language"}}) {
      std::vector<PlotPoint> pts;
      for (const auto& g : prev.groups)
        if (g.dimension == dimension)
          pts.push_back({g.group, g.label, dimension == "language" && g.strong_ftr, g.stat.mean, g.stat.lo(),
                         g.stat.hi(), g.stat.n});
      write_csv(out / (stem + ".csv"), plot_points_csv(pts, "normalized_prevalence"));
      write_text(out / (stem + ".svg"), render_dot_whisker_svg(title, "normalized prevalence (95% CI)", pts));
    }
    try {
      RegressionTable t{"Topic prevalence and future-time reference", "Normalized topic prevalence",
                        labeling.labels, spec_topic_ftr(prev.regression_rows, labeling.labels.size())};
      write_table(t, out, "table_topic_ftr", true);
    } catch (const RegressionError& e) {
      std::cerr << "table_topic_ftr: skipped (" << e.what() << ")\n";
    }
  }
  return 0;
}

// ---------------------------------------------------------------- report

int cmd_report(const AnalysisArgs& a) {
  const auto reg = load_registry(a.assets);
  const auto rows = load_rows(a.runs, reg);
  const fs::path out(a.out);
  const auto [cross, same] = split_by_kind(rows);
  if (!cross.empty()) {
    const auto by_lang = share_by_language(cross);
    write_csv(out / "fig_share_by_language.csv", plot_points_csv(by_lang, "share_later"));
    write_text(out / "fig_share_by_language.svg",
               render_dot_whisker_svg("Share of later choices by language", "share choosing later (95% CI)", by_lang));
    const auto by_rate = share_by_interest(cross);
    write_csv(out / "fig_share_by_interest.csv", plot_points_csv(by_rate, "share_later"));
    write_text(out / "fig_share_by_interest.svg",
               render_dot_whisker_svg("Share of later choices by interest rate", "share choosing later (95% CI)",
                                      by_rate));
    const auto est = write_estimates(cross, out);
    print_estimates(est);
  }
  write_regressions(rows, out, false);
  std::cout << "report written to " << out.string() << " (" << rows.size() << " choices, " << cross.size()
            << " cross-period, " << same.size() << " same-period)\n";
  return 0;
}

// ---------------------------------------------------------------- translate-templates

struct TranslateArgs {
  std::string assets = CHRONOPREF_ASSET_DIR;
  std::string templates;
  std::string languages = "all";
  std::string model = "gpt-4";
  std::string endpoint = "https://api.openai.com/v1/chat/completions";
  std::string api_key_env = "OPENAI_API_KEY";
  bool force = false;
};

int cmd_translate(const TranslateArgs& a) {
  const fs::path assets(a.assets);
  const fs::path root = a.templates.empty() ? assets / "templates" : fs::path(a.templates);
  const auto reg = load_registry(assets);
  const auto langs = select_languages(reg, a.languages);
  ClientConfig cfg;
  cfg.endpoint = a.endpoint;
  cfg.model_id = a.model;
  cfg.temperature = 0.0;
  cfg.api_key_env = a.api_key_env;
  std::shared_ptr<ChatClient> client;
  try {
    client = make_live_client(cfg);
  } catch (const ConfigError& e) {
    throw UsageError(e.what());
  }
  const auto english = PromptSet::english();
  int failures = 0;
  for (const auto& lang : langs) {
    if (lang.code == "english") continue;
    if (!a.force && !PromptSet::load(root, lang.code).fallback) {
      std::cout << lang.code << ": present, skipped\n";
      continue;
    }
    PromptSet p = english;
    p.language = lang.code;
    p.cross_period.language = lang.code;
    p.same_period.language = lang.code;
    auto fields = p.fields();
    for (auto* f : fields) *f = std::string(util::trim(client->translate(*f, lang)));
    try {
      p.cross_period.validate();
      p.same_period.validate();
    } catch (const TemplateError& e) {
      std::cerr << lang.code << ": translation damaged the placeholders (" << e.what() << "); not saved\n";
      ++failures;
      continue;
    }
    p.save(root);
    std::cout << lang.code << ": saved\n";
  }
  return failures == 0 ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Intertemporal choice experiments with language-model respondents"};
  app.set_config("--config", "", "TOML/INI file with option values; command-line flags take precedence");
  app.require_subcommand(1);

  GridArgs grid;
  auto* g = app.add_subcommand("grid", "Write the experiment grid and the reward table");
  g->add_option("--assets", grid.assets, "Asset directory");
  g->add_option("--languages", grid.languages, "'all' or a comma-separated list of language codes");
  g->add_flag("--same-period", grid.same_period, "Same-period design instead of cross-period");
  g->add_option("--out", grid.out, "Output directory");

  RunArgs run;
  auto* r = app.add_subcommand("run", "Run or resume a study");
  r->add_option("--assets", run.assets, "Asset directory");
  r->add_option("--out", run.out, "Run directory (resumed when it exists)")->required();
  r->add_option("--run-id", run.run_id, "Run identifier (default: directory name)");
  r->add_option("--study", run.study, "standard_gpt35 | standard_gpt4 | cot_gpt4 | same_period | simulated");
  r->add_option("--protocol", run.protocol, "standard | chain_of_thought");
  r->add_option("--languages", run.languages, "'all' or a comma-separated list of language codes");
  r->add_flag("--same-period", run.same_period, "Same-period design");
  r->add_option("--samples-per-cell", run.samples_per_cell, "Samples per grid cell");
  r->add_option("--simulated", run.simulated, "Simulated population: asset name or JSON path (omit for live runs)");
  r->add_option("--model", run.model, "Model identifier for live runs");
  r->add_option("--endpoint", run.endpoint, "Chat-completions endpoint URL");
  r->add_option("--api-key-env", run.api_key_env, "Environment variable holding the API key");
  r->add_option("--temperature", run.temperature, "Sampling temperature");
  r->add_option("--max-output-tokens", run.max_output_tokens, "Cap on reply length (0 = none)");
  r->add_option("--max-in-flight", run.max_in_flight, "Concurrent requests");
  r->add_option("--retry-max", run.retry_max, "Retries per request on transient failures");
  r->add_option("--backoff-ms", run.backoff_ms, "Base backoff in milliseconds");
  r->add_option("--timeout", run.timeout_s, "Request timeout in seconds");
  r->add_option("--budget", run.budget, "Token budget for the invocation (0 = unlimited)");
  r->add_option("--seed", run.seed, "Run seed");
  r->add_option("--unit", run.unit, "Reward unit shown in the question");
  r->add_option("--refusal-cap", run.refusal_cap, "Attempts per sample while the reply is a refusal");
  r->add_option("--stop-after", run.stop_after, "Stop after this many appended records (0 = run to completion)");
  r->add_flag("--quiet", run.quiet, "No progress output");

  AnalysisArgs est, reg, rep;
  auto add_analysis = [](CLI::App* sub, AnalysisArgs& args, const std::string& default_out) {
    args.out = default_out;
    sub->add_option("--assets", args.assets, "Asset directory");
    sub->add_option("--run", args.runs, "Run directory (repeatable; runs are pooled)")->required();
    sub->add_option("--out", args.out, "Output directory");
  };
  add_analysis(app.add_subcommand("estimate", "Maximum-likelihood discount rates per language and FTR group"), est,
               "estimates");
  add_analysis(app.add_subcommand("regress", "Linear probability regressions with clustered standard errors"), reg,
               "regressions");
  add_analysis(app.add_subcommand("report", "Figures, estimates and tables in one pass"), rep, "report");

  TopicsArgs top;
  auto* t = app.add_subcommand("topics", "Topic model of chain-of-thought explanations");
  t->add_option("--assets", top.assets, "Asset directory");
  t->add_option("--run", top.runs, "Chain-of-thought run directory (repeatable)");
  t->add_option("--documents", top.documents, "Documents CSV (sample_ref,text) instead of run directories");
  t->add_option("--out", top.out, "Output directory");
  t->add_option("--k", top.k, "Number of topics");
  t->add_option("--iterations", top.iterations, "Gibbs sweeps");
  t->add_option("--alpha", top.alpha, "Document-topic prior (0 = 50/K)");
  t->add_option("--beta", top.beta, "Topic-term prior");
  t->add_option("--seed", top.seed, "Sampler seed");
  t->add_option("--labels", top.labels, "Topic labeling JSON");
  t->add_option("--stopwords", top.stopwords, "Stopword list");
  t->add_option("--context-stopwords", top.context_stopwords, "Additional stopword list");
  t->add_option("--top-n", top.top_n, "Top words per topic");

  TranslateArgs tr;
  auto* x = app.add_subcommand("translate-templates", "Translate the English prompt templates with the live model");
  x->add_option("--assets", tr.assets, "Asset directory");
  x->add_option("--templates", tr.templates, "Template root (default: <assets>/templates)");
  x->add_option("--languages", tr.languages, "'all' or a comma-separated list of language codes");
  x->add_option("--model", tr.model, "Model identifier");
  x->add_option("--endpoint", tr.endpoint, "Chat-completions endpoint URL");
  x->add_option("--api-key-env", tr.api_key_env, "Environment variable holding the API key");
  x->add_flag("--force", tr.force, "Overwrite templates that already exist");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (*g) return cmd_grid(grid);
    if (*r) return cmd_run(run);
    if (app.got_subcommand("estimate")) return cmd_estimate(est);
    if (app.got_subcommand("regress")) return cmd_regress(reg);
    if (app.got_subcommand("report")) return cmd_report(rep);
    if (*t) return cmd_topics(top);
    if (*x) return cmd_translate(tr);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
