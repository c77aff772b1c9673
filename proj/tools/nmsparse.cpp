// Copyright 2026 The nmsparse Authors
// Licensed under the Apache License, Version 2.0

// Command-line front end. Data goes to stdout, diagnostics to stderr.
// Exit codes: 0 success, 1 data error, 2 usage error, 3 I/O error.

#include <CLI11.hpp>

#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>

#include "nmsparse/archive.hpp"
#include "nmsparse/pruner.hpp"
#include "nmsparse/quant.hpp"
#include "nmsparse/random.hpp"
#include "nmsparse/recipe.hpp"
#include "nmsparse/spmm.hpp"

namespace {

using namespace nmsparse;

constexpr int kData = 1;
constexpr int kUsage = 2;
constexpr int kIo = 3;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Raised after diagnostics were already printed.
struct Reported {
  int code;
};

constexpr const char* kDefaultRecipe = R"(name = demo
seed = 1
classes = 4
[phase dense]
kind = train_dense
epochs = 20
lr = 0.05
[phase prune]
kind = prune
[phase retrain]
kind = retrain_sparse
repeats = dense
)";

NMPattern pattern_arg(const std::string& text) {
  const auto p = parse_pattern(text);
  if (!p) throw UsageError("bad pattern '" + text + "', expected N:M");
  return *p;
}

NumericFormat format_arg(const std::string& text) {
  const auto f = parse_format(text);
  if (!f) throw UsageError("unknown format '" + text + "'");
  return *f;
}

struct Selection {
  std::vector<std::string> names;
  bool operator()(const std::string& name) const {
    return names.empty() || std::find(names.begin(), names.end(), name) != names.end();
  }
  // int32 entries (permutations, accumulator outputs) are never sparse
  // operands; they are only processed when named
  bool operand(const ArchiveEntry& e) const {
    if (!(*this)(e.name)) return false;
    const auto* d = std::get_if<DenseMatrix>(&e.value);
    return !(d && d->dtype() == ElementType::INT32 && names.empty());
  }
  void require_found(const TensorArchive& a) const {
    for (const std::string& n : names) {
      if (!a.find(n)) throw Error(ErrorCode::InvalidArgument, "no entry named '" + n + "'");
    }
  }
};

std::string dims(std::size_t r, std::size_t c) {
  return std::to_string(r) + "x" + std::to_string(c);
}

std::string describe(const ArchiveEntry& e) {
  std::ostringstream os;
  os << e.name << '\t' << to_string(e.kind()) << '\t';
  std::visit(
      [&](const auto& v) {
        using T = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<T, DenseMatrix>) {
          os << to_string(v.dtype()) << '\t' << dims(v.rows(), v.cols());
        } else if constexpr (std::is_same_v<T, SparseNM>) {
          os << to_string(v.dtype()) << '\t' << dims(v.rows(), v.cols()) << '\t'
             << v.pattern().name() << '\t' << storage_bits(v) << "/" << dense_bits(v) << " bits";
        } else if constexpr (std::is_same_v<T, ScaleSet>) {
          os << "fp32\t" << v.scales.size() << '\t' << to_string(v.granularity);
        } else {
          os << "mask\t" << dims(v.rows(), v.cols()) << '\t' << v.count() << " kept";
        }
      },
      e.value);
  return os.str();
}

DenseMatrix permutation_entry(const Permutation& p) {
  return DenseMatrix(1, p.size(), ElementType::INT32,
                     std::vector<double>(p.data().begin(), p.data().end()));
}

int cmd_info(const std::string& in) {
  for (const ArchiveEntry& e : read_archive(in).entries) std::cout << describe(e) << '\n';
  return 0;
}

struct RandomOpts {
  std::string out, name = "w", dtype = "fp16", pattern;
  std::size_t rows = 16, cols = 32;
  std::uint64_t seed = 1;
  double scale = 1.0;
  bool append = false;
};

int cmd_random(const RandomOpts& o) {
  const auto t = parse_element_type(o.dtype);
  if (!t) throw UsageError("unknown element type '" + o.dtype + "'");
  Rng rng(o.seed);
  TensorArchive a;
  if (o.append && std::filesystem::exists(o.out)) a = read_archive(o.out);
  if (o.pattern.empty()) {
    a.put(o.name, random_dense(o.rows, o.cols, *t, rng, o.scale));
  } else {
    a.put(o.name, random_conforming(o.rows, o.cols, pattern_arg(o.pattern), *t, rng));
  }
  write_archive(a, o.out);
  return 0;
}

struct ConvertOpts {
  std::string in, out, pattern = "2:4";
  Selection sel;
};

int cmd_compress(const ConvertOpts& o) {
  const NMPattern p = pattern_arg(o.pattern);
  TensorArchive a = read_archive(o.in);
  o.sel.require_found(a);
  int failures = 0;
  for (ArchiveEntry& e : a.entries) {
    const auto* d = std::get_if<DenseMatrix>(&e.value);
    if (!d || !o.sel.operand(e)) continue;
    if (d->cols() % static_cast<std::size_t>(p.m) != 0) {
      std::cerr << "entry '" << e.name << "': " << d->cols() << " columns are not a multiple of "
                << p.m << "\n";
      ++failures;
      continue;
    }
    if (const auto v = find_violation(*d, p)) {
      std::cerr << "entry '" << e.name << "': not " << p.name() << " sparse, first violation at row "
                << v->row << ", group " << v->group << "\n";
      ++failures;
      continue;
    }
    e.value = compress(*d, p);
  }
  if (failures) throw Reported{kData};
  write_archive(a, o.out);
  return 0;
}

int cmd_decompress(const ConvertOpts& o) {
  TensorArchive a = read_archive(o.in);
  o.sel.require_found(a);
  for (ArchiveEntry& e : a.entries) {
    if (const auto* s = std::get_if<SparseNM>(&e.value); s && o.sel(e.name)) e.value = decompress(*s);
  }
  write_archive(a, o.out);
  return 0;
}

int cmd_check(const ConvertOpts& o) {
  const NMPattern p = pattern_arg(o.pattern);
  const TensorArchive a = read_archive(o.in);
  o.sel.require_found(a);
  int failures = 0, checked = 0;
  for (const ArchiveEntry& e : a.entries) {
    if (!o.sel.operand(e)) continue;
    std::optional<DenseMatrix> d;
    if (const auto* m = std::get_if<DenseMatrix>(&e.value)) d = *m;
    if (const auto* s = std::get_if<SparseNM>(&e.value)) d = decompress(*s);
    if (const auto* mask = std::get_if<Mask>(&e.value)) {
      ++checked;
      if (mask_conforms(*mask, p)) {
        std::cout << "entry '" << e.name << "': conforms to " << p.name() << "\n";
      } else {
        std::cerr << "entry '" << e.name << "': mask does not conform to " << p.name() << "\n";
        ++failures;
      }
      continue;
    }
    if (!d) continue;
    ++checked;
    if (d->cols() % static_cast<std::size_t>(p.m) != 0) {
      std::cerr << "entry '" << e.name << "': " << d->cols() << " columns are not a multiple of "
                << p.m << "\n";
      ++failures;
    } else if (const auto v = find_violation(*d, p)) {
      std::cerr << "entry '" << e.name << "': first violation at row " << v->row << ", group "
                << v->group << "\n";
      ++failures;
    } else {
      std::cout << "entry '" << e.name << "': conforms to " << p.name() << "\n";
    }
  }
  if (checked == 0) std::cerr << "no matrix entries to check\n";
  if (failures) throw Reported{kData};
  return 0;
}

struct PruneOpts {
  std::string in, out, pattern = "2:4", permute = "off", transposable = "off";
  std::uint64_t seed = 0;
  std::uint64_t budget = 1'000'000;
  Selection sel;
};

int cmd_prune(const PruneOpts& o) {
  const NMPattern p = pattern_arg(o.pattern);
  if (o.transposable != "off" && o.permute != "off") {
    throw UsageError("--permute and --transposable cannot be combined");
  }
  if (o.transposable != "off" && !(p == NMPattern{2, 4})) {
    throw UsageError("transposable masks are 2:4 only");
  }
  const TensorArchive in = read_archive(o.in);
  o.sel.require_found(in);
  TensorArchive out;
  for (const ArchiveEntry& e : in.entries) {
    const auto* w = std::get_if<DenseMatrix>(&e.value);
    if (!w || !o.sel.operand(e)) {
      out.put(e.name, e.value);
      continue;
    }
    PruneResult res;
    DenseMatrix source = *w;
    std::optional<Permutation> perm;
    if (o.transposable != "off") {
      res = find_transposable_mask(*w, o.transposable == "greedy" ? TransposableMode::Greedy
                                                                   : TransposableMode::Exhaustive);
    } else if (o.permute != "off") {
      SearchBudget budget;
      budget.mode = o.permute == "greedy" ? SearchMode::Greedy : SearchMode::Exhaustive;
      budget.seed = o.seed;
      budget.max_evaluations = o.budget;
      PermutationSearch s = find_permutation(*w, p, budget);
      std::cerr << "entry '" << e.name << "': permuted retained " << s.result.retained_magnitude
                << " vs " << s.baseline_retained << " unpermuted\n";
      source = permute_columns(*w, s.permutation);
      res = std::move(s.result);
      perm = std::move(s.permutation);
    } else {
      res = prune_magnitude(*w, p);
    }
    std::cerr << "entry '" << e.name << "': retained magnitude " << res.retained_magnitude
              << ", lost " << res.lost_magnitude << "\n";
    out.put(e.name, apply_mask(source, res.mask));
    out.put(e.name + ".mask", res.mask);
    if (perm) out.put(e.name + ".perm", permutation_entry(*perm));
  }
  write_archive(out, o.out);
  return 0;
}

struct SpmmOpts {
  std::string a, b, out, format = "fp16", a_entry, b_entry, name = "c";
  unsigned threads = 1;
  std::size_t tile_rows = 0, tile_cols = 0, tile_depth = 0;
};

template <typename T>
const ArchiveEntry& pick(const TensorArchive& a, const std::string& name, const char* what) {
  if (!name.empty()) {
    const ArchiveEntry* e = a.find(name);
    if (!e) throw Error(ErrorCode::InvalidArgument, "no entry named '" + name + "'");
    if (!std::holds_alternative<T>(e->value)) {
      throw Error(ErrorCode::InvalidArgument, "entry '" + name + "' is not " + what);
    }
    return *e;
  }
  for (const ArchiveEntry& e : a.entries) {
    if (std::holds_alternative<T>(e.value)) return e;
  }
  throw Error(ErrorCode::InvalidArgument, std::string("archive has no ") + what + " entry");
}

int cmd_spmm(const SpmmOpts& o) {
  const NumericFormat f = format_arg(o.format);
  const TensorArchive aa = read_archive(o.a), bb = read_archive(o.b);
  const auto& a = std::get<SparseNM>(pick<SparseNM>(aa, o.a_entry, "a compressed").value);
  const auto& b = std::get<DenseMatrix>(pick<DenseMatrix>(bb, o.b_entry, "a dense").value);
  SpmmPlan plan = SpmmPlan::for_shape({a.rows(), b.cols(), a.cols()}, a.pattern().m, o.threads);
  if (o.tile_rows) plan.tile_rows = o.tile_rows;
  if (o.tile_cols) plan.tile_cols = o.tile_cols;
  if (o.tile_depth) plan.tile_depth = o.tile_depth;
  SpmmStats stats;
  TensorArchive out;
  out.put(o.name, spmm(a, b, f, plan, &stats));
  std::cerr << "multiply-adds " << stats.multiply_adds << " (dense "
            << static_cast<std::uint64_t>(a.rows()) * b.cols() * a.cols() << ")\n";
  write_archive(out, o.out);
  return 0;
}

struct CalibOpts {
  std::string in, out, method = "max", granularity = "per_row";
  bool quantize = false;
  Selection sel;
};

int cmd_calibrate(const CalibOpts& o) {
  const auto method = parse_calib_method(o.method);
  if (!method) throw UsageError("bad method '" + o.method + "'");
  const auto g = parse_granularity(o.granularity);
  if (!g) throw UsageError("bad granularity '" + o.granularity + "'");
  const TensorArchive in = read_archive(o.in);
  o.sel.require_found(in);
  TensorArchive out = in;
  for (const ArchiveEntry& e : in.entries) {
    if (!o.sel.operand(e)) continue;
    std::optional<DenseMatrix> d;
    const auto* s = std::get_if<SparseNM>(&e.value);
    if (s) d = decompress(*s);
    if (const auto* m = std::get_if<DenseMatrix>(&e.value)) d = *m;
    if (!d) continue;
    const ScaleSet scales = calibrate(std::vector<DenseMatrix>{*d}, *method, *g);
    out.put(e.name + ".scale", scales);
    if (o.quantize) {
      const DenseMatrix q = quantize(*d, scales);
      if (s) {
        out.put(e.name + ".q", compress(q, s->pattern()));
      } else {
        out.put(e.name + ".q", q);
      }
    }
  }
  write_archive(out, o.out);
  return 0;
}

struct BenchOpts {
  std::string sizes = "64x64x64,256x256x256,256x256x1024", format = "fp16", pattern;
  std::size_t repeats = 5;
  std::uint64_t seed = 1;
};

int cmd_bench(const BenchOpts& o) {
  const NumericFormat f = format_arg(o.format);
  std::vector<GemmShape> shapes;
  try {
    shapes = parse_shapes(o.sizes);
  } catch (const Error& e) {
    throw UsageError(e.what());
  }
  const NMPattern p = o.pattern.empty() ? hardware_pattern(f) : pattern_arg(o.pattern);
  std::cout << bench(shapes, f, p, o.repeats, o.seed).to_csv();
  return 0;
}

struct DemoOpts {
  std::string recipe, out;
  std::optional<std::uint64_t> seed;
};

int cmd_demo(const DemoOpts& o) {
  std::string text = kDefaultRecipe;
  if (!o.recipe.empty()) {
    std::ifstream f(o.recipe);
    if (!f) throw Error(ErrorCode::Io, "cannot open " + o.recipe);
    std::stringstream ss;
    ss << f.rdbuf();
    text = ss.str();
  }
  Recipe recipe = parse_recipe(text);
  if (o.seed) recipe.seed = *o.seed;
  const RecipeReport report = run_recipe(recipe);
  std::cout << report.to_text();
  if (!o.out.empty()) {
    TensorArchive a;
    for (std::size_t l = 0; l < report.net.layers.size(); ++l) {
      const std::string name = "fc" + std::to_string(l);
      a.put(name, report.net.layers[l].weight_matrix());
      if (l < report.masks.size()) a.put(name + ".mask", report.masks[l]);
    }
    write_archive(a, o.out);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"N:M structured sparsity tools"};
  app.require_subcommand(1);
  std::function<int()> run;

  std::string info_in;
  auto* info = app.add_subcommand("info", "List archive entries");
  info->add_option("archive", info_in, "Archive to list")->required();
  info->callback([&] { run = [&] { return cmd_info(info_in); }; });

  RandomOpts ro;
  auto* rnd = app.add_subcommand("random", "Write a random matrix to an archive");
  rnd->add_option("out", ro.out, "Output archive")->required();
  rnd->add_option("--rows", ro.rows, "Row count");
  rnd->add_option("--cols", ro.cols, "Column count");
  rnd->add_option("--dtype", ro.dtype, "fp32, tf32, fp16, bf16, int8 or int32");
  rnd->add_option("--pattern", ro.pattern, "Make the matrix N:M sparse");
  rnd->add_option("--name", ro.name, "Entry name");
  rnd->add_option("--scale", ro.scale, "Standard deviation of float elements");
  rnd->add_option("--seed", ro.seed, "Random seed");
  rnd->add_flag("--append", ro.append, "Add to an existing archive");
  rnd->callback([&] { run = [&] { return cmd_random(ro); }; });

  ConvertOpts co;
  auto* comp = app.add_subcommand("compress", "Compress dense N:M-sparse entries");
  comp->add_option("in", co.in, "Input archive")->required();
  comp->add_option("out", co.out, "Output archive")->required();
  comp->add_option("--pattern", co.pattern, "N:M pattern");
  comp->add_option("--entry", co.sel.names, "Entries to convert, all dense entries by default");
  comp->callback([&] { run = [&] { return cmd_compress(co); }; });

  ConvertOpts dco;
  auto* dec = app.add_subcommand("decompress", "Expand compressed entries to dense");
  dec->add_option("in", dco.in, "Input archive")->required();
  dec->add_option("out", dco.out, "Output archive")->required();
  dec->add_option("--entry", dco.sel.names, "Entries to convert, all sparse entries by default");
  dec->callback([&] { run = [&] { return cmd_decompress(dco); }; });

  ConvertOpts cho;
  auto* chk = app.add_subcommand("check", "Check N:M conformance");
  chk->add_option("in", cho.in, "Archive to check")->required();
  chk->add_option("--pattern", cho.pattern, "N:M pattern");
  chk->add_option("--entry", cho.sel.names, "Entries to check, all by default");
  chk->callback([&] { run = [&] { return cmd_check(cho); }; });

  PruneOpts po;
  auto* prn = app.add_subcommand("prune", "Magnitude-prune dense entries");
  prn->add_option("in", po.in, "Input archive")->required();
  prn->add_option("out", po.out, "Output archive")->required();
  prn->add_option("--pattern", po.pattern, "N:M pattern");
  prn->add_option("--permute", po.permute, "Column permutation search")
      ->check(CLI::IsMember({"off", "greedy", "exhaustive"}));
  prn->add_option("--transposable", po.transposable, "Mask that is also N:M down the columns")
      ->check(CLI::IsMember({"off", "greedy", "exhaustive"}));
  prn->add_option("--budget", po.budget, "Permutation search evaluation budget");
  prn->add_option("--seed", po.seed, "Seed for greedy restarts");
  prn->add_option("--entry", po.sel.names, "Entries to prune, all dense entries by default");
  prn->callback([&] { run = [&] { return cmd_prune(po); }; });

  SpmmOpts so;
  auto* sp = app.add_subcommand("spmm", "Multiply a compressed A by a dense B");
  sp->add_option("a", so.a, "Archive holding the compressed A")->required();
  sp->add_option("b", so.b, "Archive holding the dense B")->required();
  sp->add_option("out", so.out, "Output archive for C")->required();
  sp->add_option("--format", so.format, "Input[/accumulator], e.g. fp16/fp32 or int8");
  sp->add_option("--a-entry", so.a_entry, "Entry of A, the first sparse entry by default");
  sp->add_option("--b-entry", so.b_entry, "Entry of B, the first dense entry by default");
  sp->add_option("--name", so.name, "Output entry name");
  sp->add_option("--threads", so.threads, "Worker threads");
  sp->add_option("--tile-rows", so.tile_rows, "Output tile rows");
  sp->add_option("--tile-cols", so.tile_cols, "Output tile columns");
  sp->add_option("--tile-depth", so.tile_depth, "Depth chunk, a multiple of M");
  sp->callback([&] { run = [&] { return cmd_spmm(so); }; });

  CalibOpts cao;
  auto* cal = app.add_subcommand("calibrate", "Compute INT8 scales, optionally quantize");
  cal->add_option("in", cao.in, "Input archive")->required();
  cal->add_option("out", cao.out, "Output archive")->required();
  cal->add_option("--method", cao.method, "max, entropy, percentile or percentile=P");
  cal->add_option("--granularity", cao.granularity, "per_tensor, per_channel or per_row");
  cal->add_flag("--quantize", cao.quantize, "Also write NAME.q INT8 entries");
  cal->add_option("--entry", cao.sel.names, "Entries to calibrate, all by default");
  cal->callback([&] { run = [&] { return cmd_calibrate(cao); }; });

  BenchOpts bo;
  auto* bn = app.add_subcommand("bench", "Time dense vs sparse GEMM, CSV on stdout");
  bn->add_option("--sizes", bo.sizes, "Comma-separated MxNxK");
  bn->add_option("--format", bo.format, "Input[/accumulator] format");
  bn->add_option("--pattern", bo.pattern, "N:M pattern");
  bn->add_option("--repeats", bo.repeats, "Timed runs per size; the median is reported");
  bn->add_option("--seed", bo.seed, "Seed for the operands");
  bn->callback([&] { run = [&] { return cmd_bench(bo); }; });

  DemoOpts dmo;
  std::uint64_t demo_seed = 0;
  auto* demo = app.add_subcommand("demo-workflow", "Run a train, prune, retrain recipe");
  demo->add_option("--recipe", dmo.recipe, "Recipe file; a built-in recipe otherwise");
  auto* demo_seed_opt = demo->add_option("--seed", demo_seed, "Override the recipe seed");
  demo->add_option("--out", dmo.out, "Write final weights and masks to an archive");
  demo->callback([&] {
    if (*demo_seed_opt) dmo.seed = demo_seed;
    run = [&] { return cmd_demo(dmo); };
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kUsage;
  }

  try {
    return run();
  } catch (const Reported& r) {
    return r.code;
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return e.code() == ErrorCode::Io ? kIo : kData;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kData;
  }
}
