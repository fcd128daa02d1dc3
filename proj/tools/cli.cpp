// SPDX-License-Identifier: Apache-2.0

#include "cli.hpp"

#include <fstream>
#include <functional>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "rofkit/decompose.hpp"
#include "rofkit/dump.hpp"
#include "rofkit/offset.hpp"
#include "rofkit/pair_stats.hpp"
#include "rofkit/report.hpp"

namespace rofkit::cli {

namespace {

using json = nlohmann::json;

// Config flags shared by the analysis subcommands; unset fields fall back to
// the dump header.
struct ConfigFlags {
  std::optional<double> base;
  std::optional<std::int64_t> p_max;
  std::optional<std::string> layout;
  std::optional<std::string> theta_override;

  void attach(CLI::App *app, const std::string &prefix = "") {
    app->add_option("--" + prefix + "base", base, "RoPE base c (default: dump header)");
    app->add_option("--" + prefix + "p-max", p_max, "effective context length (default: dump p_max_config)");
    if (prefix.empty()) {
      app->add_option("--layout", layout, "pair layout of the stored activations (sliced_first|interleaved_last)");
    }
    app->add_option("--" + prefix + "theta-override", theta_override,
                    "file of r/2 explicit per-pair frequencies (whitespace or comma separated)");
  }
};

std::vector<double> read_theta_file(const std::string &path) {
  std::ifstream in(path);
  if (!in) {
    throw IoError("cannot open theta override file '" + path + "'");
  }
  std::vector<double> values;
  std::string line;
  while (std::getline(in, line)) {
    if (const auto hash = line.find('#'); hash != std::string::npos) {
      line.erase(hash);
    }
    for (char &c : line) {
      if (c == ',' || c == ';') {
        c = ' ';
      }
    }
    std::istringstream tokens(line);
    std::string token;
    while (tokens >> token) {
      try {
        std::size_t used = 0;
        values.push_back(std::stod(token, &used));
        if (used != token.size()) {
          throw std::invalid_argument(token);
        }
      } catch (const std::exception &) {
        throw FormatError("theta override file '" + path + "' has a non-numeric entry '" + token + "'");
      }
    }
  }
  return values;
}

RopeConfig apply_flags(RopeConfig config, const ConfigFlags &flags) {
  if (flags.base) {
    config.base = *flags.base;
  }
  if (flags.p_max) {
    config.p_max = *flags.p_max;
  }
  if (flags.layout) {
    config.layout = parse_layout(*flags.layout);
  }
  if (flags.theta_override) {
    config.theta_override = read_theta_file(*flags.theta_override);
  }
  config.validate();
  return config;
}

// Either a file stream or the caller's stream for "-".
class Sink {
public:
  Sink(const std::string &path, std::ostream &fallback) {
    if (path.empty() || path == "-") {
      stream_ = &fallback;
      return;
    }
    file_ = std::make_unique<std::ofstream>(path, std::ios::binary | std::ios::trunc);
    if (!*file_) {
      throw IoError("cannot open '" + path + "' for writing");
    }
    stream_ = file_.get();
    path_ = path;
  }

  std::ostream &stream() { return *stream_; }

  void close() {
    stream_->flush();
    if (file_) {
      file_->close();
    }
    if (!*stream_) {
      throw IoError("failed writing '" + (path_.empty() ? std::string("stdout") : path_) + "'");
    }
  }

private:
  std::unique_ptr<std::ofstream> file_;
  std::ostream *stream_ = nullptr;
  std::string path_;
};

template <typename Fn> void write_to(const std::string &path, std::ostream &fallback, Fn &&fn) {
  Sink sink(path, fallback);
  fn(sink.stream());
  sink.close();
}

bool ends_with(const std::string &s, const std::string &suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

PairTarget parse_pair_target(const json &j, const RopeConfig &config, Index pair) {
  PairTarget t;
  if (j.contains("phi") && j.contains("phi_lb_offset")) {
    throw ValidationError("pair target " + std::to_string(pair) + " sets both phi and phi_lb_offset");
  }
  if (j.contains("phi")) {
    t.phi = j.at("phi").get<double>();
  } else if (j.contains("phi_lb_offset")) {
    t.phi = lower_bound(config, pair) + j.at("phi_lb_offset").get<double>();
  }
  t.q_radius = j.value("q_radius", t.q_radius);
  t.k_radius = j.value("k_radius", t.k_radius);
  t.angular_noise = j.value("angular_noise", t.angular_noise);
  t.sink_positions = j.value("sink_positions", std::vector<std::int64_t>{});
  return t;
}

// "pairs": [r/2 records] or {"default": {...}, "<index>": {...}}.
std::vector<PairTarget> parse_pair_targets(const json &j, const RopeConfig &config) {
  std::vector<PairTarget> targets;
  const Index n = config.num_pairs();
  if (j.is_array()) {
    if (static_cast<Index>(j.size()) != n) {
      throw ValidationError("synth spec lists " + std::to_string(j.size()) + " pairs, config has " +
                            std::to_string(n));
    }
    for (Index i = 0; i < n; ++i) {
      targets.push_back(parse_pair_target(j.at(static_cast<std::size_t>(i)), config, i));
    }
    return targets;
  }
  if (!j.is_object()) {
    throw FormatError("synth spec 'pairs' must be an array or an object");
  }
  const json fallback = j.value("default", json::object());
  for (Index i = 0; i < n; ++i) {
    json record = fallback;
    if (const auto key = std::to_string(i); j.contains(key)) {
      const json &own = j.at(key);
      // an override's angle, in either form, replaces the default's
      if (own.contains("phi") || own.contains("phi_lb_offset")) {
        record.erase("phi");
        record.erase("phi_lb_offset");
      }
      record.update(own);
    }
    targets.push_back(parse_pair_target(record, config, i));
  }
  return targets;
}

std::pair<SynthSpec, RopeConfig> parse_synth_spec(const std::string &path) {
  std::ifstream in(path);
  if (!in) {
    throw IoError("cannot open synth spec '" + path + "'");
  }
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception &e) {
    throw FormatError("synth spec '" + path + "' is not valid JSON: " + e.what());
  }
  try {
    const json &c = j.at("config");
    RopeConfig config;
    config.base = c.value("base", config.base);
    config.rotary_dim = c.at("rotary_dim").get<Index>();
    config.head_dim = c.value("head_dim", config.rotary_dim);
    config.p_max = c.at("p_max").get<std::int64_t>();
    config.layout = parse_layout(c.value("layout", std::string("sliced_first")));
    if (c.contains("theta_override")) {
      config.theta_override = c.at("theta_override").get<std::vector<double>>();
    }
    config.validate();

    SynthSpec spec;
    spec.n_positions = j.at("n_positions").get<std::int64_t>();
    spec.seed = j.value("seed", std::uint64_t{0});
    spec.n_layers = j.value("n_layers", std::int64_t{1});
    spec.n_heads = j.value("n_heads", std::int64_t{1});
    spec.pairs = parse_pair_targets(j.at("pairs"), config);
    for (const auto &h : j.value("heads", json::array())) {
      spec.head_pairs[{h.at("layer").get<std::int64_t>(), h.at("head").get<std::int64_t>()}] =
          parse_pair_targets(h.at("pairs"), config);
    }
    return {spec, config};
  } catch (const json::exception &e) {
    throw FormatError("synth spec '" + path + "': " + e.what());
  }
}

struct Context {
  std::ostream &out;
  std::ostream &err;
  std::string stage = "setup";
};

struct Loaded {
  ActivationDump dump;
  RopeConfig config;
};

Loaded load(Context &ctx, const std::string &path, const ConfigFlags &flags) {
  ctx.stage = "reading '" + path + "'";
  Loaded l{read_dump(std::filesystem::path(path)), {}};
  ctx.stage = "building config for '" + path + "'";
  l.config = apply_flags(l.dump.meta().rope_config(), flags);
  return l;
}

} // namespace

int run(const std::vector<std::string> &args, std::ostream &out, std::ostream &err) {
  CLI::App app{"rofkit: rotary offset feature analysis of pre-rotation query/key dumps", "rofkit"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "expand help for every subcommand");

  Context ctx{out, err};
  std::function<void()> action;

  // inspect
  std::string inspect_input;
  ConfigFlags inspect_flags;
  auto *inspect = app.add_subcommand("inspect", "print dump metadata and the bound summary it implies");
  inspect->add_option("--input", inspect_input, "RKD1 dump")->required();
  inspect_flags.attach(inspect);
  inspect->callback([&] {
    action = [&] {
      auto l = load(ctx, inspect_input, inspect_flags);
      ctx.stage = "summarizing";
      const auto &m = l.dump.meta();
      const auto s = summary(l.config);
      out << "model_name: " << m.model_name << '\n'
          << "n_layers: " << m.n_layers << '\n'
          << "n_q_heads: " << m.n_q_heads << '\n'
          << "n_kv_heads: " << m.n_kv_heads << '\n'
          << "n_positions: " << m.n_positions << '\n'
          << "head_dim: " << m.head_dim << '\n'
          << "rotary_dim: " << m.rotary_dim << '\n'
          << "rope_base: " << format_real(m.rope_base) << '\n'
          << "p_max_config: " << m.p_max_config << '\n'
          << "layout: " << to_string(m.layout) << '\n'
          << "pre_rotation: " << (m.pre_rotation ? "true" : "false") << '\n'
          << "tokens: " << (m.tokens ? "present" : "absent") << '\n'
          << "features: " << m.n_layers * m.n_q_heads * l.config.num_pairs() << '\n'
          << "p_max: " << l.config.p_max << '\n'
          << "rof_fraction: " << format_real(s.rof_fraction) << '\n'
          << "mean_lower_bound: " << (s.mean_lower_bound ? format_real(*s.mean_lower_bound) : "nan") << '\n';
    };
  });

  // stats
  std::string stats_input;
  std::string stats_output;
  ConfigFlags stats_flags;
  StatsOptions stats_options;
  std::optional<Index> spread_pair;
  std::string spread_side = "key";
  std::size_t spread_bins = 0;
  auto *stats = app.add_subcommand("stats", "per-feature mean vectors, radii, angles and spreads as CSV");
  stats->add_option("--input", stats_input, "RKD1 dump")->required();
  stats->add_option("--output", stats_output, "CSV destination (default stdout)");
  stats->add_option("--exclude-positions", stats_options.exclude_positions, "positions left out of the means")
      ->delimiter(',');
  stats->add_option("--angle-floor", stats_options.angle_floor, "minimum pair norm for angle samples");
  stats->add_option("--spread-pair", spread_pair, "emit circular spread vs radius for this pair instead");
  stats->add_option("--side", spread_side, "query or key (with --spread-pair)");
  stats->add_option("--bins", spread_bins, "equal-count radius bins (with --spread-pair; 0 = per head)");
  stats_flags.attach(stats);
  stats->callback([&] {
    action = [&] {
      auto l = load(ctx, stats_input, stats_flags);
      ctx.stage = "computing statistics";
      if (spread_pair) {
        auto points = spread_vs_radius(l.dump, l.config, parse_side(spread_side), *spread_pair,
                                       stats_options.angle_floor);
        if (spread_bins > 0) {
          points = bin_by_radius(std::move(points), spread_bins);
        }
        ctx.stage = "writing spread CSV";
        write_to(stats_output, out, [&](std::ostream &s) { write_spread_csv(points, s); });
        return;
      }
      const auto table = mean_vectors(l.dump, l.config, stats_options);
      ctx.stage = "writing stats CSV";
      write_to(stats_output, out, [&](std::ostream &s) { write_pair_stats_csv(table, s); });
    };
  });

  // decompose
  std::string dec_input;
  std::string dec_output;
  std::int64_t dec_layer = 0;
  std::int64_t dec_head = 0;
  std::int64_t dec_positions = 0;
  std::vector<Index> dec_exclude;
  std::string dec_attention;
  std::optional<std::int64_t> dec_attention_positions;
  std::string dec_full_attention;
  std::optional<Index> dec_sink_pair;
  std::string dec_sinks;
  ConfigFlags dec_flags;
  auto *dec = app.add_subcommand("decompose", "per-pair dot-product profile d_i(p) and its total for one head");
  dec->add_option("--input", dec_input, "RKD1 dump")->required();
  dec->add_option("--layer", dec_layer, "layer index")->required();
  dec->add_option("--head", dec_head, "query head index")->required();
  dec->add_option("--positions", dec_positions, "largest distance p in the profile")->required();
  dec->add_option("--exclude-features", dec_exclude, "pairs left out of the total")->delimiter(',');
  dec->add_option("--output", dec_output, "profile CSV destination (default stdout)");
  dec->add_option("--attention", dec_attention, "positional attention destination (.svg or .csv)");
  dec->add_option("--attention-positions", dec_attention_positions,
                  "largest position in the positional attention (default min(positions, n_positions - 1))");
  dec->add_option("--full-attention", dec_full_attention, "attention from the raw dump (.svg or .csv)");
  dec->add_option("--sink-pair", dec_sink_pair, "pair whose mean query scores each key");
  dec->add_option("--sinks", dec_sinks, "sink score CSV destination (requires --sink-pair)");
  dec_flags.attach(dec);
  dec->callback([&] {
    action = [&] {
      auto l = load(ctx, dec_input, dec_flags);
      ctx.stage = "computing mean vectors";
      const auto table = mean_vectors(l.dump, l.config);
      ctx.stage = "decomposing";
      const auto profile = d_profile(table.head(dec_layer, dec_head), dec_positions, dec_exclude, l.config);
      ctx.stage = "writing profile CSV";
      write_to(dec_output, out, [&](std::ostream &s) { write_profile_csv(profile, s); });
      auto write_attention = [&](const std::string &path, const AttentionMatrix &a) {
        write_to(path, out, [&](std::ostream &s) {
          if (ends_with(path, ".svg")) {
            emit_attention_heatmap(a, s);
          } else {
            write_attention_csv(a, s);
          }
        });
      };
      if (!dec_attention.empty()) {
        ctx.stage = "positional attention";
        const std::int64_t n =
            dec_attention_positions.value_or(std::min(dec_positions, l.dump.meta().n_positions - 1));
        write_attention(dec_attention, positional_attention(profile, l.config.head_dim, n));
      }
      if (!dec_full_attention.empty()) {
        ctx.stage = "full attention";
        write_attention(dec_full_attention, full_attention(l.dump, dec_layer, dec_head, l.config));
      }
      if (!dec_sinks.empty() || dec_sink_pair) {
        if (!dec_sink_pair || dec_sinks.empty()) {
          throw CLI::ValidationError("--sinks and --sink-pair must be given together");
        }
        ctx.stage = "sink scores";
        const auto sinks = sink_scores(l.dump, dec_layer, dec_head, *dec_sink_pair, l.config);
        write_to(dec_sinks, out, [&](std::ostream &s) { write_sink_csv(sinks, l.dump.meta(), s); });
      }
    };
  });

  // bounds
  std::optional<std::string> bounds_input;
  std::optional<Index> bounds_rotary;
  std::optional<Index> bounds_head_dim;
  bool bounds_all = false;
  ConfigFlags bounds_flags;
  auto *bounds = app.add_subcommand("bounds", "frequency eligibility and angle lower bound per rotary pair");
  bounds->add_option("--input", bounds_input, "take the config from this dump's header");
  bounds->add_option("--rotary-dim", bounds_rotary, "rotary dims r");
  bounds->add_option("--head-dim", bounds_head_dim, "head dims (default: rotary dims)");
  bounds->add_flag("--all", bounds_all, "list ineligible pairs too");
  bounds_flags.attach(bounds);
  bounds->callback([&] {
    action = [&] {
      RopeConfig config;
      if (bounds_input) {
        config = load(ctx, *bounds_input, {}).config;
      } else {
        if (!bounds_rotary || !bounds_flags.p_max) {
          throw CLI::ValidationError("bounds needs --input or both --rotary-dim and --p-max");
        }
      }
      if (bounds_rotary) {
        config.rotary_dim = *bounds_rotary;
        config.head_dim = bounds_head_dim.value_or(std::max(config.head_dim, *bounds_rotary));
      } else if (bounds_head_dim) {
        config.head_dim = *bounds_head_dim;
      }
      ctx.stage = "evaluating bounds";
      config = apply_flags(config, bounds_flags);
      write_bounds_table(config, bounds_all, out);
    };
  });

  // classify
  std::string cls_input;
  std::string cls_output;
  ConfigFlags cls_flags;
  auto *cls = app.add_subcommand("classify", "per-feature eligibility, lower bound and offset-feature verdicts");
  cls->add_option("--input", cls_input, "RKD1 dump")->required();
  cls->add_option("--output", cls_output, "CSV destination (default stdout)");
  cls_flags.attach(cls);
  cls->callback([&] {
    action = [&] {
      auto l = load(ctx, cls_input, cls_flags);
      ctx.stage = "classifying";
      const auto rows = verdicts(mean_vectors(l.dump, l.config), l.config);
      ctx.stage = "writing verdicts CSV";
      write_to(cls_output, out, [&](std::ostream &s) { write_verdicts_csv(rows, s); });
    };
  });

  // recall
  std::vector<std::string> rec_inputs;
  std::string rec_output;
  RecallOptions rec_options;
  std::string rec_side = "key";
  ConfigFlags rec_flags;
  auto *rec = app.add_subcommand("recall", "upper/lower bound recall of large-radius features");
  rec->add_option("--input", rec_inputs, "one or more RKD1 dumps")->required()->expected(1, -1);
  rec->add_option("--output", rec_output, "CSV destination (default stdout)");
  rec->add_option("--thresholds", rec_options.thresholds, "minimum radii defining positives")->delimiter(',');
  rec->add_option("--relax", rec_options.relax, "slack for the relaxed lower bound (radians)");
  rec->add_option("--side", rec_side, "radius used for positives: key or query");
  rec_flags.attach(rec);
  rec->callback([&] {
    action = [&] {
      rec_options.side = parse_side(rec_side);
      std::ostringstream buffer;
      for (std::size_t i = 0; i < rec_inputs.size(); ++i) {
        auto l = load(ctx, rec_inputs[i], rec_flags);
        ctx.stage = "recall for '" + rec_inputs[i] + "'";
        const auto rows = verdicts(mean_vectors(l.dump, l.config), l.config);
        const auto table = recall_table(rows, rec_options);
        write_recall_csv(table, buffer, rec_inputs.size() > 1 ? rec_inputs[i] : std::string(), i == 0);
      }
      ctx.stage = "writing recall CSV";
      write_to(rec_output, out, [&](std::ostream &s) { s << buffer.str(); });
    };
  });

  // heatmap
  std::string heat_input;
  std::string heat_output;
  std::string heat_csv;
  std::string heat_side = "key";
  std::string heat_reducer = "max_abs";
  ConfigFlags heat_flags;
  auto *heat = app.add_subcommand("heatmap", "per-layer, per-dim magnitude grid as SVG");
  heat->add_option("--input", heat_input, "RKD1 dump")->required();
  heat->add_option("--output", heat_output, "SVG destination (default stdout)");
  heat->add_option("--csv", heat_csv, "also write the matrix as CSV");
  heat->add_option("--side", heat_side, "query or key");
  heat->add_option("--reducer", heat_reducer, "max_abs or mean_abs");
  heat_flags.attach(heat);
  heat->callback([&] {
    action = [&] {
      auto l = load(ctx, heat_input, heat_flags);
      ctx.stage = "reducing magnitudes";
      const auto matrix = magnitude_summary(l.dump, parse_side(heat_side), parse_reducer(heat_reducer));
      ctx.stage = "writing heatmap";
      write_to(heat_output, out, [&](std::ostream &s) { emit_heatmap(matrix, l.config, s); });
      if (!heat_csv.empty()) {
        write_to(heat_csv, out, [&](std::ostream &s) { write_magnitude_csv(matrix, s); });
      }
    };
  });

  // scatter
  std::string sc_input;
  std::string sc_output;
  ConfigFlags sc_flags;
  auto *sc = app.add_subcommand("scatter", "key radius vs query-key angle per pair, with lower bounds, as SVG");
  sc->add_option("--input", sc_input, "RKD1 dump")->required();
  sc->add_option("--output", sc_output, "SVG destination (default stdout)");
  sc_flags.attach(sc);
  sc->callback([&] {
    action = [&] {
      auto l = load(ctx, sc_input, sc_flags);
      ctx.stage = "classifying";
      const auto rows = verdicts(mean_vectors(l.dump, l.config), l.config);
      ctx.stage = "writing scatter";
      write_to(sc_output, out, [&](std::ostream &s) { emit_scatter(rows, l.config, s); });
    };
  });

  // compare-extension
  std::string ext_base_input;
  std::string ext_ext_input;
  std::string ext_output;
  std::string ext_sums;
  ConfigFlags ext_base_flags;
  ConfigFlags ext_ext_flags;
  auto *ext = app.add_subcommand("compare-extension", "key radius changes between a base and an extended model");
  ext->add_option("--base-input", ext_base_input, "dump of the base model")->required();
  ext->add_option("--extended-input", ext_ext_input, "dump of the context-extended model")->required();
  ext->add_option("--output", ext_output, "per-feature delta CSV destination (default stdout)");
  ext->add_option("--sums", ext_sums, "per-head and global group sums CSV destination");
  ext_base_flags.attach(ext, "base-");
  ext_ext_flags.attach(ext, "extended-");
  ext->callback([&] {
    action = [&] {
      auto before = load(ctx, ext_base_input, ext_base_flags);
      auto after = load(ctx, ext_ext_input, ext_ext_flags);
      ctx.stage = "comparing";
      const auto cmp = compare_extension(mean_vectors(before.dump, before.config), before.config,
                                         mean_vectors(after.dump, after.config), after.config);
      ctx.stage = "writing comparison";
      write_to(ext_output, out, [&](std::ostream &s) { write_extension_csv(cmp, s); });
      if (!ext_sums.empty()) {
        write_to(ext_sums, out, [&](std::ostream &s) { write_extension_sums_csv(cmp, s); });
      }
    };
  });

  // synth
  std::string syn_spec;
  std::string syn_output;
  auto *syn = app.add_subcommand("synth", "generate a synthetic RKD1 dump from a JSON target spec");
  syn->add_option("--spec", syn_spec, "JSON synth spec")->required();
  syn->add_option("--output", syn_output, "RKD1 destination")->required();
  syn->callback([&] {
    action = [&] {
      ctx.stage = "reading synth spec";
      const auto [spec, config] = parse_synth_spec(syn_spec);
      ctx.stage = "synthesizing";
      const auto dump = synth_dump(spec, config);
      ctx.stage = "writing dump";
      const auto bytes = write_dump(dump, std::filesystem::path(syn_output));
      err << "wrote " << bytes << " bytes to " << syn_output << '\n';
    };
  });

  std::vector<const char *> argv{"rofkit"};
  for (const auto &a : args) {
    argv.push_back(a.c_str());
  }
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError &e) {
    // help and help-all surface as parse errors with exit code 0
    return app.exit(e, out, err) == 0 ? kSuccess : kUsageError;
  }

  const std::string name = app.get_subcommands().front()->get_name();
  try {
    action();
    return kSuccess;
  } catch (const CLI::ParseError &e) {
    err << "rofkit " << name << ": usage error: " << e.what() << '\n';
    return kUsageError;
  } catch (const FormatError &e) {
    err << "rofkit " << name << ": " << ctx.stage << " failed (format): " << e.what() << '\n';
    return kInputError;
  } catch (const IoError &e) {
    err << "rofkit " << name << ": " << ctx.stage << " failed (input/output): " << e.what() << '\n';
    return kInputError;
  } catch (const Error &e) {
    err << "rofkit " << name << ": " << ctx.stage << " failed (validation): " << e.what() << '\n';
    return kValidationError;
  }
}

} // namespace rofkit::cli
