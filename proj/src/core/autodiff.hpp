#pragma once

#include <functional>
#include <map>
#include <memory>
#include <random>

#include "core/common.hpp"

namespace hand3r::ad {

struct Param {
  std::string name;
  Mat value;
  Mat grad;
  bool trainable = true;
  double lr_scale = 1.0;
  // Adam moments
  Mat m, v;
};

class ParamStore {
 public:
  Param& create(const std::string& name, int rows, int cols, double init_std,
                std::mt19937_64& rng);
  Param& add(const std::string& name, Mat value);
  Param* find(const std::string& name);
  const Param* find(const std::string& name) const;
  std::vector<Param*> all();
  std::vector<const Param*> all() const;
  // Parameters whose name starts with the prefix.
  std::vector<Param*> group(const std::string& prefix);
  void zero_grads();

 private:
  std::vector<std::unique_ptr<Param>> params_;
  std::map<std::string, Param*> by_name_;
};

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

class Adam {
 public:
  explicit Adam(AdamConfig cfg) : cfg_(cfg) {}
  // Updates trainable params only, scaled per-param by lr_scale.
  void step(std::vector<Param*>& params);

 private:
  AdamConfig cfg_;
  long t_ = 0;
};

// Reverse-mode tape over Eigen double matrices. Build a graph with the op
// methods, call backward() on a 1x1 node, then collect_param_grads().
// With record=false only values are computed.
class Tape {
 public:
  using Id = int;

  explicit Tape(bool record = true);
  uint64_t serial() const { return serial_; }

  Id input(Mat v, bool needs_grad = false);
  Id param(Param& p);

  const Mat& val(Id id) const { return nodes_[id].value; }
  Mat& grad(Id id);
  bool needs_grad(Id id) const { return nodes_[id].needs_grad; }

  Id add(Id a, Id b);
  Id sub(Id a, Id b);
  Id mul(Id a, Id b);                       // elementwise
  Id mul_const(Id a, const Mat& c);         // elementwise by constant
  Id scale(Id a, double c);
  Id matmul(Id a, Id b);
  Id transpose(Id a);
  Id add_row_broadcast(Id x, Id row);       // row added to every row of x
  Id layernorm(Id x, Id gain, Id bias);     // rowwise, gain/bias 1 x C
  Id softmax_rows(Id x);
  Id gelu(Id x);
  Id softplus(Id x);
  Id reciprocal(Id x);
  Id square(Id x);
  Id log(Id x);                             // elementwise ln, x > 0
  Id add_const(Id x, double c);
  Id clamp_min(Id x, double lo);            // zero gradient where clamped
  Id slice_rows(Id x, int start, int n);
  Id slice_cols(Id x, int start, int n);
  Id concat_rows(const std::vector<Id>& parts);
  Id concat_cols(const std::vector<Id>& parts);
  Id gather_rows(Id x, std::vector<int> idx);
  Id mean_rows(Id x);                       // 1 x C
  Id sum_all(Id x);                         // 1 x 1
  Id mean_all(Id x);                        // 1 x 1
  // 1x6 row -> 3x3 rotation via Gram-Schmidt on two column directions.
  Id rot6d_to_matrix(Id six);
  // Squared geodesic angle between a predicted rotation node and a constant.
  Id geodesic_sq(Id rot, const Mat3& target);

  // Generic node; back receives this node's gradient and should accumulate
  // into parent grads via tape.grad(parent).
  Id custom(Mat value, bool needs_grad, std::function<void(Tape&, const Mat&)> back);

  void backward(Id root);
  // Adds node grads into Param::grad for trainable params seen by param().
  void collect_param_grads();

  size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Mat value;
    Mat grad;
    bool needs_grad = false;
    std::function<void(Tape&, const Mat&)> back;
  };

  Id push(Mat value, bool needs_grad, std::function<void(Tape&, const Mat&)> back);

  bool record_;
  uint64_t serial_;
  std::vector<Node> nodes_;
  std::vector<std::pair<Id, Param*>> param_nodes_;
};

}  // namespace hand3r::ad
