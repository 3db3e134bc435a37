#pragma once

#include <istream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "tbo/bo_engine.hpp"

namespace tbo {

/// Rows of a tabular benchmark grouped by task, duplicates removed (first
/// occurrence kept), in order of first appearance.
struct DiscreteTaskTable {
  Eigen::Index dim = 0;
  std::vector<int> task_ids;
  std::map<int, Eigen::MatrixXd> features;
  std::map<int, Eigen::VectorXd> objective;
};

/// CSV with a header line, then `task_id, x_1 .. x_D, objective` per row.
/// Throws ParseError (with line number) on malformed rows and InputError when
/// fewer than two tasks are present.
DiscreteTaskTable parse_discrete_csv(std::istream& in);
DiscreteTaskTable read_discrete_csv(const std::string& path);

struct DiscreteBenchmark {
  Domain domain = Domain::discrete(Eigen::MatrixXd::Zero(1, 1));
  Eigen::VectorXd candidate_values;
  std::vector<TaskDataset> sources;
  int target_task = 0;
};

/// The target task's rows form the candidate pool (never downsampled). Sources
/// are `n_sources` other tasks picked uniformly (all when <= 0), each
/// downsampled without replacement to `downsample` rows (no limit when <= 0).
/// The target is drawn uniformly unless given.
DiscreteBenchmark ingest_discrete_benchmark(const DiscreteTaskTable& table, Rng& rng,
                                            std::optional<int> target_task = std::nullopt,
                                            int n_sources = 0, Eigen::Index downsample = 0);

}  // namespace tbo
