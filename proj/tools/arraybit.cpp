// Command line front end: gen, build, query, estimate, append, bench.

#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "arraybit/arrayio.hpp"
#include "arraybit/baseline.hpp"
#include "arraybit/datagen.hpp"
#include "arraybit/hierindex.hpp"
#include "arraybit/query.hpp"

namespace ab = arraybit;

namespace {

constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitInvariant = 3;

std::vector<std::int64_t> parse_list(const std::string& s, const char* what) {
  std::vector<std::int64_t> out;
  std::stringstream ss(s);
  for (std::string t; std::getline(ss, t, ',');) {
    try {
      std::size_t used = 0;
      out.push_back(std::stoll(t, &used));
      if (used != t.size()) throw std::invalid_argument(t);
    } catch (const std::exception&) {
      throw ab::input_error(std::string("bad ") + what + " list '" + s + "'");
    }
  }
  if (out.empty()) throw ab::input_error(std::string("empty ") + what + " list");
  return out;
}

struct Settings {
  ab::IndexParams index;
  ab::DimsAttsParams dimsatts;
};

std::size_t to_size(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const auto n = std::stoull(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return n;
  } catch (const std::exception&) {
    throw ab::input_error("parameter " + key + " needs a non-negative integer, got '" + v + "'");
  }
}

Settings parse_params(const std::vector<std::string>& pairs) {
  Settings s;
  for (const auto& p : pairs) {
    const auto eq = p.find('=');
    if (eq == std::string::npos) throw ab::input_error("parameters are key=value, got '" + p + "'");
    const std::string key = p.substr(0, eq), v = p.substr(eq + 1);
    if (key == "bins") s.index.bins = to_size(key, v);
    else if (key == "fanout") s.index.fanout = static_cast<std::uint32_t>(to_size(key, v));
    else if (key == "leaf_bins") s.index.leaf.bins = to_size(key, v);
    else if (key == "encoding") s.index.leaf.encoding = ab::parse_encoding(v);
    else if (key == "E") s.index.leaf.sparsity = to_size(key, v);
    else if (key == "dense_levels") s.index.dense_levels = to_size(key, v);
    else if (key == "block_nodes") s.index.block_nodes = to_size(key, v);
    else if (key == "dimsatts_bins") s.dimsatts.bins = to_size(key, v);
    else if (key == "dimsatts_encoding") s.dimsatts.encoding = ab::parse_encoding(v);
    else throw ab::input_error("unknown parameter '" + key + "'");
  }
  return s;
}

std::size_t attribute_of(const ab::ArraySchema& schema, const std::string& name) {
  return name.empty() ? 0 : schema.attribute_index(name);
}

ab::Query load_query(const ab::Index& index, const std::string& text) {
  return ab::normalize(text, index.schema(), index.attribute());
}

void check_same_schema(const ab::Index& index, const ab::ArrayStore& store) {
  if (!(index.schema() == store.schema())) throw ab::data_error("index was built for a different array schema");
}

std::string csv_quote(const std::string& s) {
  std::string out = "\"";
  for (const char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

int run(int argc, char** argv) {
  CLI::App app{"Hierarchical bitmap index over chunked arrays"};
  app.require_subcommand(1);
  std::vector<std::string> params;

  // gen
  auto* gen = app.add_subcommand("gen", "generate a sum-of-Gaussians array");
  std::string shape, chunk, out;
  ab::SumGaussSpec spec;
  gen->add_option("--shape", shape, "extents, e.g. 1024,1024")->required();
  gen->add_option("--chunk", chunk, "chunk extents (default 32 each)");
  gen->add_option("--gaussians", spec.gaussians, "number of Gaussians")->capture_default_str();
  gen->add_option("--seed", spec.seed)->capture_default_str();
  gen->add_option("--threshold", spec.threshold, "values below become empty")->capture_default_str();
  gen->add_option("--eig-min", spec.eig_min)->capture_default_str();
  gen->add_option("--eig-max", spec.eig_max, "0 uses smallest extent / 4")->capture_default_str();
  gen->add_option("--attribute", spec.attribute)->capture_default_str();
  gen->add_option("--out", out, "header path to write")->required();

  // build
  auto* build = app.add_subcommand("build", "index an array");
  std::string input, attribute, index_path;
  build->add_option("--input", input, "array header")->required();
  build->add_option("--attribute", attribute, "attribute to index (default: first)");
  build->add_option("--output", index_path, "index file to write")->required();
  build->add_option("--params", params, "key=value index parameters");

  // query
  auto* query = app.add_subcommand("query", "run a query");
  std::string text;
  bool cells = false;
  query->add_option("--index", index_path)->required();
  query->add_option("--input", input, "array header")->required();
  query->add_option("query", text, "e.g. \"where a >= 30 and d0 in [50,60]\"");
  query->add_flag("--cells", cells, "print every matching cell");

  // estimate
  auto* est = app.add_subcommand("estimate", "bound the match count from the top levels");
  std::size_t levels = 0;
  est->add_option("--index", index_path)->required();
  est->add_option("--input", input, "array header")->required();
  est->add_option("--levels", levels, "levels to expand")->required();
  est->add_option("query", text);

  // append
  auto* app_cmd = app.add_subcommand("append", "append a chunk-aligned block");
  std::string add_path, array_out;
  app_cmd->add_option("--index", index_path)->required();
  app_cmd->add_option("--input", input, "current array header")->required();
  app_cmd->add_option("--add", add_path, "block header with an origin line")->required();
  app_cmd->add_option("--output", out, "updated index file")->required();
  app_cmd->add_option("--array-out", array_out, "header for the merged array")->required();

  // bench
  auto* bench = app.add_subcommand("bench", "run a workload across engines and write CSV");
  std::string workload, engines_opt = "arraybit,dimsatts,fullscan";
  std::size_t repeat = 3;
  bench->add_option("--input", input, "array header")->required();
  bench->add_option("--attribute", attribute);
  bench->add_option("--workload", workload, "one query per line")->required();
  bench->add_option("--out", out, "CSV report")->required();
  bench->add_option("--repeat", repeat)->capture_default_str();
  bench->add_option("--engines", engines_opt)->capture_default_str();
  bench->add_option("--params", params, "key=value index parameters");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kExitUsage;
  }

  if (*gen) {
    spec.shape = parse_list(shape, "shape");
    if (!chunk.empty()) spec.chunk = parse_list(chunk, "chunk");
    const auto store = ab::generate(spec);
    ab::write_array(store, out);
    std::cout << "cells: " << store.schema().cell_count() << "\nnonempty: " << store.nonempty_count()
              << "\nchunks: " << store.chunk_count() << '\n';
    return 0;
  }
  if (*build) {
    const Settings s = parse_params(params);
    const auto store = ab::read_array(input);
    const auto index = ab::Index::build(store, attribute_of(store.schema(), attribute), s.index);
    index.save(index_path);
    std::cout << "levels: " << index.top_level() + 1 << "\nnodes: " << index.total_node_count()
              << "\nbytes: " << index.size_in_bytes() << '\n';
    return 0;
  }
  if (*query || *est) {
    const auto index = ab::Index::load(index_path);
    const auto store = ab::read_array(input);
    check_same_schema(index, store);
    const ab::Query q = load_query(index, text);
    if (*est) {
      const auto e = ab::estimate(index, store, q, levels);
      std::cout << "min: " << e.min << "\nmax: " << e.max << '\n';
      return 0;
    }
    const auto rs = ab::execute(index, store, q);
    std::cout << "matches: " << rs.count << "\ncomplete_regions: " << rs.complete.size()
              << "\npartial_chunks: " << rs.cells.size() << "\nblocks_read: " << rs.stats.blocks_read
              << "\nbitmaps_fetched: " << rs.stats.bitmaps_fetched
              << "\ncandidate_checks: " << rs.stats.candidate_checks << '\n';
    if (cells) {
      const auto& schema = index.schema();
      for (const auto id : ab::expand_cells(index, rs)) {
        const auto c = schema.delinearize(id);
        for (std::size_t d = 0; d < c.size(); ++d) std::cout << (d ? "," : "") << c[d];
        std::cout << ',' << *store.value_at(c, index.attribute()) << '\n';
      }
    }
    return 0;
  }
  if (*app_cmd) {
    auto index = ab::Index::load(index_path);
    auto store = ab::read_array(input);
    check_same_schema(index, store);
    const auto block = ab::read_block(add_path);
    const auto added = ab::append_block(store, block);
    index.append(store, added);
    index.save(out);
    ab::write_array(store, array_out);
    std::cout << "added_chunks: " << added.size() << "\nlevels: " << index.top_level() + 1 << '\n';
    return 0;
  }
  if (*bench) {
    const Settings s = parse_params(params);
    if (repeat == 0) throw ab::input_error("--repeat must be positive");
    const auto store = ab::read_array(input);
    const std::size_t attr = attribute_of(store.schema(), attribute);
    std::vector<std::string> engines;
    {
      std::stringstream ss(engines_opt);
      for (std::string e; std::getline(ss, e, ',');) {
        if (e != "arraybit" && e != "dimsatts" && e != "fullscan") throw ab::input_error("unknown engine '" + e + "'");
        engines.push_back(e);
      }
    }
    std::vector<std::string> queries;
    {
      std::ifstream wf(workload);
      if (!wf) throw ab::data_error("cannot open workload '" + workload + "'");
      for (std::string line; std::getline(wf, line);)
        if (!line.empty() && line[0] != '#') queries.push_back(line);
    }
    std::optional<ab::Index> index;
    std::optional<ab::DimsAttsIndex> flat;
    for (const auto& e : engines) {
      if (e == "arraybit") index = ab::Index::build(store, attr, s.index);
      if (e == "dimsatts") flat = ab::DimsAttsIndex::build(store, attr, s.dimsatts);
    }
    std::uint64_t total = 0;
    store.for_each_nonempty(attr, [&](const ab::Coord&, double) { ++total; });

    std::ofstream os(out);
    if (!os) throw ab::data_error("cannot write '" + out + "'");
    os << "# arraybit-bench v1\n"
       << "engine,query,hit_ratio,wall_time,blocks_read,bitmaps_fetched,candidate_checks,result_count,index_bytes\n";
    const std::size_t index_bytes = index ? index->size_in_bytes() : 0;
    const std::size_t flat_bytes = flat ? flat->size_in_bytes() : 0;
    for (const auto& text_q : queries) {
      const ab::Query q = ab::normalize(text_q, store.schema(), attr);
      for (const auto& e : engines) {
        ab::QueryStats stats;
        std::uint64_t count = 0;
        double seconds = 0;
        for (std::size_t r = 0; r < repeat; ++r) {
          stats = {};
          const auto t0 = std::chrono::steady_clock::now();
          if (e == "arraybit") {
            const auto rs = ab::execute(*index, store, q);
            count = rs.count;
            stats = rs.stats;
          } else if (e == "dimsatts") {
            count = flat->query_bitmap(q, &stats).count();
          } else {
            count = ab::full_scan(store, attr, q, &stats).size();
          }
          seconds += std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        }
        const std::size_t bytes = e == "arraybit" ? index_bytes : e == "dimsatts" ? flat_bytes : 0;
        const double ratio = total ? static_cast<double>(count) / static_cast<double>(total) : 0.0;
        os << e << ',' << csv_quote(text_q) << ',' << ratio << ',' << seconds / static_cast<double>(repeat) << ','
           << stats.blocks_read << ',' << stats.bitmaps_fetched << ',' << stats.candidate_checks << ',' << count
           << ',' << bytes << '\n';
      }
    }
    if (!os) throw ab::data_error("write failed for '" + out + "'");
    return 0;
  }
  return kExitUsage;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const ab::input_error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const ab::data_error& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kExitData;
  } catch (const ab::invariant_error& e) {
    std::cerr << "internal error: " << e.what() << '\n';
    return kExitInvariant;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << '\n';
    return kExitInvariant;
  }
}
