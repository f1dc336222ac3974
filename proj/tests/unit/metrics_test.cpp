#include <gtest/gtest.h>

#include <fstream>
#include <sstream>

#include "helpers.hpp"

using namespace fedbench;
using namespace fedbench::test;

namespace {

ModelSpec toy_mlp() { return make_mlp({8, 8, 1}, {16}, 10, Activation::relu); }

TrainingRun small_run(std::size_t rounds, double C = 0.5) {
  const auto spec = toy_mlp();
  StrategyConfig st;
  st.name = StrategyName::fedavg;
  st.B = 8;
  st.C = C;
  st.optimizer = {OptimizerKind::adam, 1e-3};
  EngineOptions opt;
  opt.stop.max_round = rounds;
  return run_training(spec, st, synth_clients(6, 24, 3), init_params(spec, 1), opt);
}

std::vector<std::string> split_header(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) {
    const auto b = cell.find_first_not_of(' ');
    out.push_back(cell.substr(b));
  }
  return out;
}

}  // namespace

TEST(Accuracy, WeightedExamples) {
  EXPECT_DOUBLE_EQ(weighted_accuracy(std::vector<double>{1.0, 0.0}, std::vector<std::size_t>{50, 50}), 0.5);
  EXPECT_NEAR(weighted_accuracy(std::vector<double>{0.9, 0.7}, std::vector<std::size_t>{10, 30}), 0.75, 1e-15);
  EXPECT_THROW(weighted_accuracy(std::vector<double>{}, std::vector<std::size_t>{}), MetricError);
  EXPECT_THROW(weighted_accuracy(std::vector<double>{1.0}, std::vector<std::size_t>{1, 2}), MetricError);
}

TEST(Accuracy, PerfectClassifierIsOne) {
  // A linear model whose kernel is the class prototype scores every noiseless
  // synthetic image correctly.
  const Dataset d = synth_dataset(200, 4, 3, 7, 0.0);
  const auto spec = make_mlp({3, 3, 1}, {}, 4, Activation::relu);
  ParamVector p(ParamLayout::of(spec));
  auto kernel = p.slice(*p.layout().find(1, "kernel"));
  auto bias = p.slice(*p.layout().find(1, "bias"));
  for (int c = 0; c < 4; ++c) {
    const auto it = std::find(d.labels.begin(), d.labels.end(), c);
    const auto row = d.images.row(static_cast<std::size_t>(it - d.labels.begin()));
    double norm = 0.0;
    for (std::size_t j = 0; j < 9; ++j) {
      kernel[static_cast<std::size_t>(c) * 9 + j] = 2.0 * row[j] - 1.0;
      norm += row[j];
    }
    bias[static_cast<std::size_t>(c)] = -norm;
  }
  PartitionPlan plan;
  plan.n_clients = 4;
  plan.max_per_client = 50;
  const auto clients = partition(d, plan);
  EXPECT_EQ(fl_accuracy(spec, p, clients).fl_acc, 1.0);
}

TEST(Accuracy, FlAccBetweenClientExtremes) {
  const auto spec = toy_mlp();
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto clients = synth_clients(5, 30, seed);
    const auto r = fl_accuracy(spec, random_params(spec, seed, 0.4), clients);
    const auto [lo, hi] = std::minmax_element(r.per_client.begin(), r.per_client.end());
    EXPECT_LE(*lo, r.fl_acc + 1e-15);
    EXPECT_GE(*hi, r.fl_acc - 1e-15);
  }
  auto clients = synth_clients(2, 30, 1);
  clients[1].test = Dataset{};
  EXPECT_THROW(fl_accuracy(spec, random_params(spec, 1), clients), MetricError);
}

TEST(Accuracy, DeltaLossExamples) {
  EXPECT_TRUE(delta_accuracy_loss(0.983, 0.988, 0.01));
  EXPECT_FALSE(delta_accuracy_loss(0.90, 0.988, 0.01));
  for (double x : {0.0, 0.5, 1.0})
    for (double d : {1e-9, 0.01, 0.5}) EXPECT_TRUE(delta_accuracy_loss(x, x, d));
  EXPECT_FALSE(delta_accuracy_loss(0.5, 0.51, 0.01 - 1e-12));
  EXPECT_THROW(delta_accuracy_loss(0.5, 0.5, 0.0), PreconditionError);
}

TEST(Accuracy, FlAccBoundedByCentralOverSeeds) {
  const auto spec = toy_mlp();
  double gap = 0.0;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto clients = synth_clients(5, 40, 200 + seed);
    const auto init = init_params(spec, seed);
    StrategyConfig st;
    st.B = 8;
    st.optimizer = {OptimizerKind::adam, 3e-3};
    st.seed = seed;
    EngineOptions opt;
    opt.stop.max_round = 40;
    opt.stop.patience = 5;
    const auto run = run_training(spec, st, clients, init, opt);
    TrainerConfig tc;
    tc.optimizer = {OptimizerKind::adam, 3e-3};
    tc.B = 8;
    tc.max_epochs = 40;
    tc.patience = 5;
    tc.seed = seed;
    const auto base = run_baselines(spec, clients, init, tc);
    gap += fl_accuracy(spec, run.best_params, clients).fl_acc - base.central_acc;
  }
  EXPECT_LE(gap / 5.0, 0.02);
}

TEST(Robustness, DeltasAreIidMinusSetting) {
  RobustnessReport r;
  r.add("iid", "fedavg", 0.98);
  r.add("1-class", "fedavg", 0.90);
  EXPECT_NEAR(r.delta("1-class", "fedavg"), 0.08, 1e-15);
  EXPECT_EQ(r.delta("iid", "fedavg"), 0.0);
  EXPECT_THROW(r.delta("2-class", "fedavg"), MetricError);
  EXPECT_THROW(r.delta("1-class", "fedsgd"), MetricError);
}

TEST(Report, ColumnsCoverResultLine) {
  const std::string header =
      "dataset, model, optimizer, gradient_filter, IID, IID-Strategy, compress, compress-rate, B, C, E, LR, "
      "EarlyStopPatience, Device, LocalAcc, CentralAcc, FLAcc, TimeAll, Time-Init, Time-TrainReq, Time-TrainRun, "
      "Time-TrainSync, Time-TrainAgg, Time-ValReq, Time-ValRun, Time-ValSync, Time-ValAgg, CommRound, "
      "CommAmount(Server Send), CommAmount(Server Receive), LogFile";
  const Json rec = compile_reports(small_run(2), AccuracyReport{0.5, 0.4, 0.6, {0.5}}, RecordContext{});
  const auto& cols = record_columns();
  for (const auto& c : split_header(header)) {
    EXPECT_TRUE(rec.contains(c)) << c;
    EXPECT_NE(std::find(cols.begin(), cols.end(), c), cols.end()) << c;
  }
  for (const auto& [k, _] : rec.items()) EXPECT_NE(std::find(cols.begin(), cols.end(), k), cols.end()) << k;
}

TEST(Report, SubstepMeansResumToTimeAll) {
  const auto run = small_run(5);
  const Json rec = compile_reports(run, AccuracyReport{}, RecordContext{});
  double total = 0.0;
  for (const char* k : {"Time-Init", "Time-TrainReq", "Time-TrainRun", "Time-TrainSync", "Time-TrainAgg", "Time-ValReq",
                        "Time-ValRun", "Time-ValSync", "Time-ValAgg"})
    total += rec[k].get<double>() * rec["CommRound"].get<double>();
  EXPECT_NEAR(total, rec["TimeAll"].get<double>(), 1e-9);
  Nanos exact = 0;
  for (const auto& t : run.traces) exact += t.total();
  EXPECT_EQ(exact, run.time_all);
}

TEST(Report, ZeroRoundRunIsAllZero) {
  const auto run = small_run(0);
  const Json rec = compile_reports(run, AccuracyReport{}, RecordContext{});
  EXPECT_EQ(rec["CommRound"], 0);
  EXPECT_EQ(rec["TimeAll"], 0.0);
  EXPECT_EQ(rec["CommAmountBytes(Server Send)"], 0);
  EXPECT_EQ(rec["CommAmountBytes(Server Receive)"], 0);
  EXPECT_EQ(rec["Time-TrainRun"], 0.0);
  EXPECT_EQ(rec["AvgClientSendBytes"], 0.0);
}

TEST(Report, ClosedSystemBytes) {
  const auto run = small_run(4, 0.3);
  const auto c = comm_report(run);
  const auto n = static_cast<double>(run.client_sent.size());
  EXPECT_DOUBLE_EQ(c.avg_client_received_bytes * n, static_cast<double>(c.server_sent_bytes));
  EXPECT_DOUBLE_EQ(c.avg_client_sent_bytes * n, static_cast<double>(c.server_received_bytes));
  const Json rec = compile_reports(run, AccuracyReport{}, RecordContext{});
  EXPECT_DOUBLE_EQ(rec["CommAmount(Server Send)"].get<double>() * 1024 * 1024,
                   static_cast<double>(c.server_sent_bytes));
}

TEST(Report, JsonlAndCsv) {
  const auto dir = temp_dir("records");
  const std::string path = (dir / "r.jsonl").string();
  EXPECT_TRUE(read_jsonl(path).empty());
  RecordContext ctx;
  ctx.cell = "a,b";
  RecordWriter w(path);
  w.append(compile_reports(small_run(1), AccuracyReport{0.25, std::nullopt, 0.5, {}}, ctx));
  w.append(Json{{"cell", "x"}, {"error", "boom \"quoted\""}});
  const auto back = read_jsonl(path);
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[0]["FLAcc"], 0.25);
  EXPECT_TRUE(back[0]["LocalAcc"].is_null());
  const std::string csv = to_csv(back);
  const std::string first = csv.substr(0, csv.find('\n'));
  EXPECT_EQ(first.rfind("time,dataset,model", 0), 0u);
  EXPECT_NE(first.find(",error"), std::string::npos);
  EXPECT_NE(csv.find("\"a,b\""), std::string::npos);
  EXPECT_NE(csv.find("\"boom \"\"quoted\"\"\""), std::string::npos);
  EXPECT_NE(csv.find(",None,"), std::string::npos);
  std::ofstream(path, std::ios::app) << "{broken\n";
  EXPECT_THROW(read_jsonl(path), MetricError);
}
