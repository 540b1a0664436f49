// dtrack: distill, adapt, track, bench, flops and selfcheck from the shell.
// Exit codes: 0 success, 1 runtime error or failed check, 2 usage error,
// 3 training diverged.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <memory>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "dt/adapt.hpp"
#include "dt/bench.hpp"
#include "dt/distill.hpp"
#include "dt/image_io.hpp"
#include "dt/recipes.hpp"
#include "dt/synth.hpp"
#include "dt/testing/checks.hpp"
#include "dt/tracker.hpp"
#include "dt/weights_io.hpp"

namespace fs = std::filesystem;
using namespace dt;

namespace {

std::uint64_t default_seed() {
  if (const char* s = std::getenv("DT_SEED"); s && *s) {
    try {
      return std::stoull(s);
    } catch (const std::exception&) {
      throw Error(std::string("DT_SEED is not an unsigned integer: ") + s);
    }
  }
  return 0;
}

std::uint64_t resolve_seed(const std::optional<std::uint64_t>& flag) { return flag ? *flag : default_seed(); }

bool starts_with(const std::string& s, const std::string& prefix) { return s.rfind(prefix, 0) == 0; }

int parse_count(const std::string& s, const std::string& what) {
  try {
    std::size_t used = 0;
    const int n = std::stoi(s, &used);
    if (used == s.size() && n > 0) return n;
  } catch (const std::exception&) {
  }
  throw Error(what + ": expected a positive integer, got '" + s + "'");
}

/// "random:SEED" or a weight file whose spec must match the profile teacher.
Network load_teacher(const std::string& source, Profile profile) {
  if (starts_with(source, "random:")) {
    const auto seed = std::stoull(source.substr(7));
    return random_teacher(profile, seed);
  }
  auto wf = load_weights(source, teacher_spec(profile));
  return Network{wf.spec, wf.weights};
}

Network load_network(const std::string& path, std::map<std::string, std::string>* meta = nullptr) {
  auto wf = load_weights(path);
  if (meta) *meta = wf.metadata;
  return Network{wf.spec, wf.weights};
}

Profile profile_of(const std::map<std::string, std::string>& meta) {
  const auto it = meta.find("profile");
  return it == meta.end() ? Profile::desk64 : parse_profile(it->second);
}

/// Teacher for online adaptation: explicit flag first, then the source
/// recorded when the student was distilled.
Network adaptation_teacher(const std::string& flag, const std::map<std::string, std::string>& meta) {
  std::string source = flag;
  if (source.empty()) {
    const auto it = meta.find("teacher");
    if (it == meta.end()) throw Error("no teacher recorded in the weight file; pass --teacher");
    source = it->second;
  }
  return load_teacher(source, profile_of(meta));
}

/// "synth:NAME" picks a sequence of the seeded synthetic benchmark.
SequenceRecord load_one_sequence(const std::string& arg, std::uint64_t seed) {
  if (starts_with(arg, "synth:")) {
    const auto name = arg.substr(6);
    for (auto& s : synthetic_benchmark(seed))
      if (s.name == name) return s;
    throw Error("no synthetic sequence named '" + name + "'");
  }
  std::string warning;
  auto seq = load_sequence(arg, &warning);
  if (!warning.empty()) std::cerr << "warning: " << warning << '\n';
  return seq;
}

/// "synth:N" is the synthetic benchmark with N/4 sequences per kind.
std::vector<SequenceRecord> load_benchmark(const std::string& arg, std::uint64_t seed, int length) {
  if (starts_with(arg, "synth:")) {
    const int n = parse_count(arg.substr(6), "--dataset");
    if (n % 4 != 0) throw Error("--dataset synth:N needs N divisible by 4 (one share per sequence kind)");
    return synthetic_benchmark(seed, n / 4, length);
  }
  std::vector<std::string> warnings;
  auto seqs = load_dataset(arg, &warnings);
  for (const auto& w : warnings) std::cerr << "warning: " << w << '\n';
  return seqs;
}

struct TrackOptions {
  std::string level = "fused";
  bool adapt = false;
  int iters = 8;
  std::string teacher;
  double eta = 0.01;
};

void add_track_options(CLI::App* cmd, TrackOptions& o) {
  cmd->add_option("--level", o.level, "feature level: low, middle, high or fused")
      ->check(CLI::IsMember({"low", "middle", "high", "fused"}));
  cmd->add_flag("--adapt,!--no-adapt", o.adapt, "fine-tune the network on the first frame");
  cmd->add_option("--iters", o.iters, "adaptation iterations")->check(CLI::NonNegativeNumber);
  cmd->add_option("--teacher", o.teacher, "teacher for adaptation (weights file or random:SEED)");
  cmd->add_option("--eta", o.eta, "filter interpolation rate")->check(CLI::Range(0.0, 1.0));
}

TrackerConfig tracker_config(const TrackOptions& o, std::uint64_t seed) {
  TrackerConfig tc;
  tc.level = parse_level(o.level);
  tc.eta = o.eta;
  tc.adapt = o.adapt;
  tc.adapt_config.iterations = o.iters;
  tc.adapt_config.seed = seed;
  return tc;
}

std::string checks_report(const std::vector<testing::CheckResult>& results) {
  std::string out;
  for (const auto& r : results) out += (r.pass ? "PASS " : "FAIL ") + r.name + ": " + r.detail + '\n';
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Distilled correlation-filter tracking"};
  app.require_subcommand(1);
  std::optional<std::uint64_t> seed_flag;
  app.add_option("--seed", seed_flag, "seed (default: DT_SEED or 0)");

  // distill
  auto* distill = app.add_subcommand("distill", "train a pruned student against a teacher");
  std::string d_teacher = "random:0", d_data = "synth:20", d_profile = "desk64", d_out, d_log;
  int d_epochs = 20, d_pairs = 200, d_batch = 1;
  distill->add_option("--teacher", d_teacher, "weights file or random:SEED");
  distill->add_option("--data", d_data, "dataset directory or synth:N");
  distill->add_option("--profile", d_profile)->check(CLI::IsMember({"table3", "desk64"}));
  distill->add_option("--epochs", d_epochs)->check(CLI::PositiveNumber);
  distill->add_option("--pairs", d_pairs, "training pairs")->check(CLI::PositiveNumber);
  distill->add_option("--batch", d_batch)->check(CLI::PositiveNumber);
  distill->add_option("--out", d_out, "student weight file")->required();
  distill->add_option("--log", d_log, "per-epoch loss CSV");

  // adapt
  auto* adapt = app.add_subcommand("adapt", "fine-tune a network on the first frame of a sequence");
  std::string a_net, a_seq, a_out, a_teacher;
  int a_iters = 8;
  adapt->add_option("--net", a_net)->required()->check(CLI::ExistingFile);
  adapt->add_option("--sequence", a_seq, "sequence directory or synth:NAME")->required();
  adapt->add_option("--iters", a_iters)->check(CLI::NonNegativeNumber);
  adapt->add_option("--teacher", a_teacher, "weights file or random:SEED (default: recorded source)");
  adapt->add_option("--out", a_out)->required();

  // track
  auto* track = app.add_subcommand("track", "track one sequence and write the boxes");
  std::string t_net, t_seq, t_out;
  TrackOptions t_opt;
  track->add_option("--net", t_net)->required()->check(CLI::ExistingFile);
  track->add_option("--sequence", t_seq, "sequence directory or synth:NAME")->required();
  track->add_option("--out", t_out)->required();
  add_track_options(track, t_opt);

  // bench
  auto* bench = app.add_subcommand("bench", "one-pass evaluation over a dataset");
  std::string b_net, b_data = "synth:20", b_out;
  unsigned b_threads = 1;
  int b_length = 50;
  TrackOptions b_opt;
  bench->add_option("--net", b_net)->required()->check(CLI::ExistingFile);
  bench->add_option("--dataset", b_data, "dataset directory or synth:N");
  bench->add_option("--out", b_out, "report CSV")->required();
  bench->add_option("--threads", b_threads, "worker threads (0 = all cores)");
  bench->add_option("--length", b_length, "frames per synthetic sequence")->check(CLI::Range(2, 100000));
  add_track_options(bench, b_opt);

  // flops
  auto* flops = app.add_subcommand("flops", "FLOPs and parameter report");
  std::string f_spec, f_ref, f_csv;
  flops->add_option("--spec", f_spec, "network spec JSON")->required()->check(CLI::ExistingFile);
  flops->add_option("--ref", f_ref, "reference (teacher) spec JSON")->check(CLI::ExistingFile);
  flops->add_option("--csv", f_csv, "also write the per-layer CSV");

  // spec
  auto* spec = app.add_subcommand("spec", "write a built-in profile spec as JSON");
  std::string s_profile = "desk64", s_role = "teacher", s_out;
  spec->add_option("--profile", s_profile)->check(CLI::IsMember({"table3", "desk64"}));
  spec->add_option("--role", s_role)->check(CLI::IsMember({"teacher", "student"}));
  spec->add_option("--out", s_out)->required();

  // selfcheck
  auto* selfcheck = app.add_subcommand("selfcheck", "oracle and gradient checks; exit 0 iff all pass");
  std::string c_out;
  selfcheck->add_option("--out", c_out, "write the verdicts (no timings) to a file");

  CLI11_PARSE(app, argc, argv);

  try {
    const auto seed = resolve_seed(seed_flag);

    if (*distill) {
      const auto profile = parse_profile(d_profile);
      const Network teacher = load_teacher(d_teacher, profile);
      std::vector<TrainingPair> pairs;
      if (starts_with(d_data, "synth:")) {
        SynthTrainingRecipe recipe;
        recipe.sequences = parse_count(d_data.substr(6), "--data");
        recipe.pairs = d_pairs;
        recipe.out_size = teacher.spec.input.height;
        pairs = synthetic_training_pairs(seed, recipe);
      } else {
        std::vector<std::string> warnings;
        const auto seqs = load_dataset(d_data, &warnings);
        for (const auto& w : warnings) std::cerr << "warning: " << w << '\n';
        CropConfig crop;
        crop.out_size = teacher.spec.input.height;
        pairs = sample_pairs(seqs, d_pairs, crop, seed + 1);
      }
      TrainingConfig cfg;
      cfg.epochs = d_epochs;
      cfg.batch_size = d_batch;
      cfg.seed = seed;
      const auto run = train_offline(pairs, teacher, cfg);
      if (!d_log.empty()) write_loss_csv(d_log, run.history);
      for (std::size_t e = 0; e < run.history.size(); ++e)
        std::printf("epoch %zu total %.6f tracking %.6f fidelity %.6f decay %.6f\n", e, run.history[e].total,
                    run.history[e].tracking, run.history[e].fidelity, run.history[e].decay);
      if (run.diverged) {
        std::cerr << "error: training diverged: " << run.message << '\n';
        return 3;
      }
      save_weights(d_out, run.student.spec, run.student.weights,
                   {{"teacher", d_teacher},
                    {"profile", d_profile},
                    {"seed", std::to_string(seed)},
                    {"epochs", std::to_string(d_epochs)},
                    {"pairs", std::to_string(pairs.size())}});
      std::printf("wrote %s\n", d_out.c_str());
      return 0;
    }

    if (*adapt) {
      std::map<std::string, std::string> meta;
      const Network student = load_network(a_net, &meta);
      const Network teacher = adaptation_teacher(a_teacher, meta);
      const auto seq = load_one_sequence(a_seq, seed);
      AdaptConfig ac;
      ac.iterations = a_iters;
      ac.seed = seed;
      ac.geometry.out_size = student.spec.input.height;
      const auto r = adapt_online(student, teacher, seq.frame(0), seq.boxes[0], ac);
      if (!r.warning.empty()) std::cerr << "warning: " << r.warning << '\n';
      for (std::size_t i = 0; i < r.history.size(); ++i)
        std::printf("iter %zu total %.6f tracking %.6f\n", i, r.history[i].total, r.history[i].tracking);
      meta["adapted_on"] = seq.name;
      meta["adapt_iters"] = std::to_string(a_iters);
      save_weights(a_out, r.network.spec, r.network.weights, meta);
      std::printf("wrote %s\n", a_out.c_str());
      return 0;
    }

    if (*track) {
      std::map<std::string, std::string> meta;
      auto net = std::make_shared<const Network>(load_network(t_net, &meta));
      std::shared_ptr<const Network> teacher;
      if (t_opt.adapt) teacher = std::make_shared<const Network>(adaptation_teacher(t_opt.teacher, meta));
      const auto seq = load_one_sequence(t_seq, seed);
      const auto tc = tracker_config(t_opt, seed);
      auto state = tracker_init(seq.frame(0), seq.boxes[0], net, tc, teacher.get());
      if (!state.adapt_warning.empty()) std::cerr << "warning: " << state.adapt_warning << '\n';
      std::vector<Box> boxes{seq.boxes[0]};
      for (std::size_t i = 1; i < seq.size(); ++i) boxes.push_back(tracker_update(state, seq.frame(i)).box);
      write_trajectory(t_out, boxes);
      std::vector<double> ious;
      for (std::size_t i = 0; i < boxes.size(); ++i) ious.push_back(iou(boxes[i], seq.boxes[i]));
      SequenceResult r;
      r.ious = ious;
      score_sequence(r);
      std::printf("%s: %zu frames auc %.4f mean_iou %.4f\n", seq.name.c_str(), boxes.size(), r.auc, r.mean_iou);
      return 0;
    }

    if (*bench) {
      std::map<std::string, std::string> meta;
      auto net = std::make_shared<const Network>(load_network(b_net, &meta));
      std::shared_ptr<const Network> teacher;
      if (b_opt.adapt) teacher = std::make_shared<const Network>(adaptation_teacher(b_opt.teacher, meta));
      const auto seqs = load_benchmark(b_data, seed, b_length);
      const auto rep = run_ope(seqs, fkcf_factory(net, tracker_config(b_opt, seed), teacher), b_threads);
      write_text_atomic(b_out, report_csv(rep));
      for (const auto& s : rep.sequences)
        if (s.failed) std::cerr << "warning: " << s.name << " failed: " << s.failure << '\n';
      std::printf("%zu sequences mean auc %.4f mean_iou %.4f mean fps %.1f\n", rep.sequences.size(), rep.mean_auc,
                  rep.mean_iou, rep.mean_fps);
      return 0;
    }

    if (*flops) {
      const auto s = load_spec(f_spec);
      const auto ref = f_ref.empty() ? s : load_spec(f_ref);
      const auto rep = report_model(ref, s);
      if (f_ref.empty()) {
        const auto& f = rep.student;
        std::printf("%s flops %llu weights %llu biases %llu\n", f.name.c_str(),
                    static_cast<unsigned long long>(f.total_flops), static_cast<unsigned long long>(f.total_weights),
                    static_cast<unsigned long long>(f.total_biases));
      } else {
        std::cout << model_report_text(rep);
      }
      if (!f_csv.empty()) write_text_atomic(f_csv, model_report_csv(rep));
      return 0;
    }

    if (*spec) {
      const auto p = parse_profile(s_profile);
      save_spec(s_out, s_role == "teacher" ? teacher_spec(p) : student_spec(p));
      return 0;
    }

    if (*selfcheck) {
      const auto results = testing::fast_checks(seed);
      bool ok = true;
      for (const auto& r : results) {
        std::printf("%s %-20s %s (%.2f s)\n", r.pass ? "PASS" : "FAIL", r.name.c_str(), r.detail.c_str(), r.seconds);
        ok = ok && r.pass;
      }
      if (!c_out.empty()) write_text_atomic(c_out, checks_report(results));
      return ok ? 0 : 1;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
