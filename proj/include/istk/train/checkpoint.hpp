#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "istk/binio.hpp"
#include "istk/error.hpp"
#include "istk/fields/model.hpp"
#include "istk/nn/adam.hpp"

namespace istk::train {

// Optimizer state for every parameter group.
struct OptimizerState {
  nn::AdamState template_state;
  std::vector<nn::AdamState> hyper_states;
  std::vector<nn::AdamState> alpha_states, beta_states;
  nn::AdamState t_state, beta_t_state;

  static OptimizerState zeros(const field::DeformTemplateModel& m) {
    OptimizerState s;
    s.template_state = nn::AdamState::zeros(m.template_params.size());
    for (const auto& hp : m.hyper_params) s.hyper_states.push_back(nn::AdamState::zeros(hp.size()));
    for (const auto& a : m.alphas) s.alpha_states.push_back(nn::AdamState::zeros(a.size()));
    for (const auto& b : m.betas) s.beta_states.push_back(nn::AdamState::zeros(b.size()));
    s.t_state = nn::AdamState::zeros(m.t.size());
    s.beta_t_state = nn::AdamState::zeros(m.beta_t.size());
    return s;
  }
};

struct Checkpoint {
  field::DeformTemplateModel model;
  OptimizerState opt;
  std::vector<std::string> instance_ids;
  std::uint64_t seed = 0;
  int epoch = 0;
};

// --- file format ------------------------------------------------------------
// "RSCK", u32 version=1, u64 header length, UTF-8 JSON header, then f64
// arrays in header-declared order: template params, hyper params per layer,
// alpha table, beta table, t, beta_t, Adam moments.

namespace detail {

inline void write_array(std::ostream& os, const Eigen::VectorXd& v) {
  os.write(reinterpret_cast<const char*>(v.data()), std::streamsize(v.size() * 8));
}

inline Eigen::VectorXd read_array(std::istream& is, Eigen::Index n, const char* what) {
  Eigen::VectorXd v(n);
  read_bytes(is, v.data(), std::size_t(n) * 8, what);
  return v;
}

}  // namespace detail

inline void save_checkpoint(const Checkpoint& ck, const std::filesystem::path& path) {
  const auto& m = ck.model;
  nlohmann::ordered_json header;
  header["version"] = 1;
  header["category"] = m.category;
  header["seed"] = ck.seed;
  header["epoch"] = ck.epoch;
  header["omega0"] = m.config.omega0;
  header["latent_dim"] = m.config.latent_dim;
  header["hidden"] = m.config.hidden;
  header["layers"] = m.config.layers;
  header["hyper_hidden"] = m.config.hyper_hidden;
  header["n_instances"] = m.instance_count();
  header["instance_ids"] = ck.instance_ids;

  std::vector<std::pair<std::string, const Eigen::VectorXd*>> arrays;
  arrays.emplace_back("template_params", &m.template_params);
  for (int l = 0; l < int(m.hyper_params.size()); ++l)
    arrays.emplace_back("hyper_params/" + std::to_string(l), &m.hyper_params[size_t(l)]);
  for (int i = 0; i < m.instance_count(); ++i)
    arrays.emplace_back("alpha/" + std::to_string(i), &m.alphas[size_t(i)]);
  for (int i = 0; i < m.instance_count(); ++i)
    arrays.emplace_back("beta/" + std::to_string(i), &m.betas[size_t(i)]);
  arrays.emplace_back("t", &m.t);
  arrays.emplace_back("beta_t", &m.beta_t);

  std::vector<std::pair<std::string, const nn::AdamState*>> moments;
  moments.emplace_back("adam/template", &ck.opt.template_state);
  for (int l = 0; l < int(ck.opt.hyper_states.size()); ++l)
    moments.emplace_back("adam/hyper/" + std::to_string(l), &ck.opt.hyper_states[size_t(l)]);
  for (int i = 0; i < int(ck.opt.alpha_states.size()); ++i)
    moments.emplace_back("adam/alpha/" + std::to_string(i), &ck.opt.alpha_states[size_t(i)]);
  for (int i = 0; i < int(ck.opt.beta_states.size()); ++i)
    moments.emplace_back("adam/beta/" + std::to_string(i), &ck.opt.beta_states[size_t(i)]);
  moments.emplace_back("adam/t", &ck.opt.t_state);
  moments.emplace_back("adam/beta_t", &ck.opt.beta_t_state);

  nlohmann::ordered_json order = nlohmann::ordered_json::array();
  for (const auto& [name, v] : arrays)
    order.push_back({{"name", name}, {"count", v->size()}});
  for (const auto& [name, s] : moments) {
    order.push_back({{"name", name + "/m"}, {"count", s->m.size()}});
    order.push_back({{"name", name + "/v"}, {"count", s->v.size()}});
  }
  header["arrays"] = order;
  nlohmann::ordered_json steps = nlohmann::ordered_json::array();
  for (const auto& [name, s] : moments) steps.push_back(s->step);
  header["adam_steps"] = steps;

  const std::string hs = header.dump();
  atomic_write(path, [&](std::ostream& os) {
    write_bytes(os, "RSCK", 4);
    write_u32le(os, 1);
    write_u64le(os, hs.size());
    write_bytes(os, hs.data(), hs.size());
    for (const auto& [name, v] : arrays) detail::write_array(os, *v);
    for (const auto& [name, s] : moments) {
      detail::write_array(os, s->m);
      detail::write_array(os, s->v);
    }
  });
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  auto is = open_input(path);
  char magic[4];
  read_bytes(is, magic, 4, "magic");
  if (std::string(magic, 4) != "RSCK")
    throw Error(Error::Kind::Parse, "not a checkpoint file: " + path.string());
  if (read_u32le(is, "version") != 1)
    throw Error(Error::Kind::Parse, "unsupported checkpoint version");
  const auto hlen = read_u64le(is, "header length");
  std::string hs(hlen, '\0');
  read_bytes(is, hs.data(), hlen, "header");
  const auto header = nlohmann::json::parse(hs);

  field::ModelConfig cfg;
  cfg.latent_dim = header.at("latent_dim").get<int>();
  cfg.hidden = header.at("hidden").get<int>();
  cfg.layers = header.at("layers").get<int>();
  cfg.hyper_hidden = header.at("hyper_hidden").get<int>();
  cfg.omega0 = header.at("omega0").get<double>();
  const int n = header.at("n_instances").get<int>();

  Checkpoint ck;
  ck.model = field::DeformTemplateModel::make(cfg, n, 0, header.at("category").get<std::string>());
  ck.seed = header.at("seed").get<std::uint64_t>();
  ck.epoch = header.at("epoch").get<int>();
  ck.instance_ids = header.at("instance_ids").get<std::vector<std::string>>();
  ck.opt = OptimizerState::zeros(ck.model);

  auto& m = ck.model;
  std::map<std::string, Eigen::VectorXd*> slots;
  slots["template_params"] = &m.template_params;
  for (int l = 0; l < int(m.hyper_params.size()); ++l)
    slots["hyper_params/" + std::to_string(l)] = &m.hyper_params[size_t(l)];
  for (int i = 0; i < n; ++i) {
    slots["alpha/" + std::to_string(i)] = &m.alphas[size_t(i)];
    slots["beta/" + std::to_string(i)] = &m.betas[size_t(i)];
  }
  slots["t"] = &m.t;
  slots["beta_t"] = &m.beta_t;

  std::map<std::string, nn::AdamState*> mslots;
  mslots["adam/template"] = &ck.opt.template_state;
  for (int l = 0; l < int(ck.opt.hyper_states.size()); ++l)
    mslots["adam/hyper/" + std::to_string(l)] = &ck.opt.hyper_states[size_t(l)];
  for (int i = 0; i < n; ++i) {
    mslots["adam/alpha/" + std::to_string(i)] = &ck.opt.alpha_states[size_t(i)];
    mslots["adam/beta/" + std::to_string(i)] = &ck.opt.beta_states[size_t(i)];
  }
  mslots["adam/t"] = &ck.opt.t_state;
  mslots["adam/beta_t"] = &ck.opt.beta_t_state;

  for (const auto& entry : header.at("arrays")) {
    const std::string name = entry.at("name").get<std::string>();
    const Eigen::Index count = entry.at("count").get<Eigen::Index>();
    if (name.size() > 2 && name.substr(name.size() - 2) == "/m") {
      const std::string base = name.substr(0, name.size() - 2);
      mslots.at(base)->m = detail::read_array(is, count, name.c_str());
    } else if (name.size() > 2 && name.substr(name.size() - 2) == "/v") {
      const std::string base = name.substr(0, name.size() - 2);
      mslots.at(base)->v = detail::read_array(is, count, name.c_str());
    } else {
      *slots.at(name) = detail::read_array(is, count, name.c_str());
    }
  }
  const auto steps = header.at("adam_steps");
  std::size_t k = 0;
  std::vector<nn::AdamState*> in_order;
  in_order.push_back(&ck.opt.template_state);
  for (auto& s : ck.opt.hyper_states) in_order.push_back(&s);
  for (auto& s : ck.opt.alpha_states) in_order.push_back(&s);
  for (auto& s : ck.opt.beta_states) in_order.push_back(&s);
  in_order.push_back(&ck.opt.t_state);
  in_order.push_back(&ck.opt.beta_t_state);
  for (auto* s : in_order) s->step = steps.at(k++).get<long>();
  return ck;
}

}  // namespace istk::train
