#include "tbo/discrete_benchmark.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include "tbo/errors.hpp"

namespace tbo {

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) out.push_back(trim(cell));
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

double parse_number(const std::string& cell, int line) {
  double v = 0.0;
  const char* end = cell.data() + cell.size();
  const auto [ptr, ec] = std::from_chars(cell.data(), end, v);
  if (cell.empty() || ec != std::errc() || ptr != end || !std::isfinite(v))
    throw ParseError("'" + cell + "' is not a finite number", line);
  return v;
}

}  // namespace

DiscreteTaskTable parse_discrete_csv(std::istream& in) {
  std::string line;
  int line_no = 0;
  std::size_t columns = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!trim(line).empty()) {
      columns = split(line).size();
      break;
    }
  }
  if (columns == 0) throw ParseError("missing header", std::max(line_no, 1));
  if (columns < 3) throw ParseError("need task_id, at least one feature and an objective", line_no);

  DiscreteTaskTable table;
  table.dim = static_cast<Eigen::Index>(columns - 2);
  std::map<int, std::vector<std::vector<double>>> rows;
  std::map<int, std::vector<double>> values;
  std::map<int, std::set<std::vector<double>>> seen;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const auto cells = split(line);
    if (cells.size() != columns)
      throw ParseError("expected " + std::to_string(columns) + " columns, found " +
                           std::to_string(cells.size()),
                       line_no);
    const double id = parse_number(cells[0], line_no);
    if (id != std::floor(id) || std::abs(id) > 1e9) throw ParseError("task_id must be an integer", line_no);
    const int task = static_cast<int>(id);
    std::vector<double> x(static_cast<std::size_t>(table.dim));
    for (std::size_t j = 0; j < x.size(); ++j) x[j] = parse_number(cells[j + 1], line_no);
    const double y = parse_number(cells.back(), line_no);
    if (!rows.count(task)) table.task_ids.push_back(task);
    if (!seen[task].insert(x).second) continue;
    rows[task].push_back(std::move(x));
    values[task].push_back(y);
  }
  if (table.task_ids.size() < 2) throw InputError("discrete benchmark needs at least two tasks");
  for (int task : table.task_ids) {
    const auto& r = rows[task];
    Eigen::MatrixXd m(static_cast<Eigen::Index>(r.size()), table.dim);
    for (std::size_t i = 0; i < r.size(); ++i)
      for (Eigen::Index j = 0; j < table.dim; ++j) m(static_cast<Eigen::Index>(i), j) = r[i][j];
    table.features[task] = std::move(m);
    table.objective[task] =
        Eigen::Map<const Eigen::VectorXd>(values[task].data(), static_cast<Eigen::Index>(values[task].size()));
  }
  return table;
}

DiscreteTaskTable read_discrete_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open discrete benchmark file '" + path + "'");
  return parse_discrete_csv(in);
}

DiscreteBenchmark ingest_discrete_benchmark(const DiscreteTaskTable& table, Rng& rng,
                                            std::optional<int> target_task, int n_sources,
                                            Eigen::Index downsample) {
  if (table.task_ids.size() < 2) throw InputError("discrete benchmark needs at least two tasks");
  int target;
  if (target_task) {
    if (!table.features.count(*target_task))
      throw InputError("target task " + std::to_string(*target_task) + " not in the benchmark");
    target = *target_task;
  } else {
    std::uniform_int_distribution<std::size_t> pick(0, table.task_ids.size() - 1);
    target = table.task_ids[pick(rng)];
  }
  std::vector<int> others;
  for (int t : table.task_ids)
    if (t != target) others.push_back(t);
  if (n_sources > 0 && static_cast<std::size_t>(n_sources) < others.size()) {
    std::shuffle(others.begin(), others.end(), rng);
    others.resize(static_cast<std::size_t>(n_sources));
  }

  DiscreteBenchmark out;
  out.target_task = target;
  out.domain = Domain::discrete(table.features.at(target));
  out.candidate_values = table.objective.at(target);
  int id = 0;
  for (int t : others) {
    const Eigen::MatrixXd& x = table.features.at(t);
    const Eigen::VectorXd& y = table.objective.at(t);
    std::vector<Eigen::Index> idx(static_cast<std::size_t>(x.rows()));
    std::iota(idx.begin(), idx.end(), 0);
    if (downsample > 0 && downsample < x.rows()) {
      std::shuffle(idx.begin(), idx.end(), rng);
      idx.resize(static_cast<std::size_t>(downsample));
      std::sort(idx.begin(), idx.end());
    }
    Eigen::MatrixXd xs(static_cast<Eigen::Index>(idx.size()), x.cols());
    Eigen::VectorXd ys(static_cast<Eigen::Index>(idx.size()));
    for (std::size_t i = 0; i < idx.size(); ++i) {
      xs.row(static_cast<Eigen::Index>(i)) = x.row(idx[i]);
      ys[static_cast<Eigen::Index>(i)] = y[idx[i]];
    }
    out.sources.emplace_back(std::move(xs), std::move(ys), id++);
  }
  return out;
}

}  // namespace tbo
