#include "ccm/autograd.hpp"

#include <atomic>
#include <unordered_map>
#include <unordered_set>

#include "ccm/error.hpp"
#include "ccm/ops.hpp"

namespace ccm {

namespace {

thread_local bool t_grad_enabled = true;
std::atomic<bool> g_debug_checks{false};

// Nodes reachable from a root, inputs before consumers.
std::vector<Node*> topological_order(Node* root) {
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  struct Frame {
    Node* node;
    std::size_t next_input;
  };
  std::vector<Frame> stack{{root, 0}};
  visited.insert(root);
  while (!stack.empty()) {
    Frame& top = stack.back();
    const auto& inputs = top.node->inputs();
    if (top.next_input < inputs.size()) {
      const Tensor& in = inputs[top.next_input++];
      if (in.defined() && in.node()) {
        Node* child = in.node().get();
        if (visited.insert(child).second) stack.push_back({child, 0});
      }
      continue;
    }
    order.push_back(top.node);
    stack.pop_back();
  }
  return order;
}

struct Propagation {
  // Gradients of requested tensors (or of every reached leaf when no
  // targets were given), keyed by tensor identity.
  std::unordered_map<const void*, Tensor> grads;
  std::unordered_map<const void*, Tensor> leaves;
};

Tensor accumulate(const Tensor& existing, const Tensor& incoming) {
  if (!existing.defined()) return incoming;
  return ops::add(existing, incoming);
}

// targets == nullptr: every differentiable leaf receives a gradient.
Propagation propagate(const Tensor& root, const std::unordered_set<const void*>* targets,
                      bool create_graph) {
  Propagation result;
  GradModeGuard mode(create_graph);

  Node* root_node = root.node().get();
  const std::vector<Node*> order = topological_order(root_node);

  std::unordered_map<Node*, const void*> target_nodes;
  if (targets) {
    // Map non-leaf targets to their producing node by scanning node inputs.
    for (Node* n : order) {
      for (const Tensor& in : n->inputs()) {
        if (in.defined() && in.node() && targets->count(in.id())) {
          target_nodes.emplace(in.node().get(), in.id());
        }
      }
    }
    if (targets->count(root.id())) target_nodes.emplace(root_node, root.id());
  }

  // needed[n]: gradient must flow through n to reach some target.
  std::unordered_map<Node*, bool> needed;
  needed.reserve(order.size());
  for (Node* n : order) {
    bool need = !targets;
    if (!need) {
      for (const Tensor& in : n->inputs()) {
        if (!in.defined() || !in.requires_grad()) continue;
        if (in.node()) {
          Node* child = in.node().get();
          if (needed[child] || target_nodes.count(child)) {
            need = true;
            break;
          }
        } else if (targets->count(in.id())) {
          need = true;
          break;
        }
      }
    }
    needed[n] = need;
  }

  std::unordered_map<Node*, Tensor> node_grads;
  node_grads[root_node] = Tensor::ones(root.shape());

  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    auto found = node_grads.find(n);
    if (found == node_grads.end()) continue;
    Tensor g = std::move(found->second);
    node_grads.erase(found);

    if (auto t = target_nodes.find(n); t != target_nodes.end()) result.grads[t->second] = g;
    if (!needed[n]) continue;

    const auto& inputs = n->inputs();
    std::vector<bool> wanted(inputs.size(), false);
    bool any = false;
    for (std::size_t i = 0; i < inputs.size(); ++i) {
      const Tensor& in = inputs[i];
      if (!in.defined() || !in.requires_grad()) continue;
      if (in.node()) {
        Node* child = in.node().get();
        wanted[i] = needed[child] || target_nodes.count(child) > 0;
      } else {
        wanted[i] = !targets || targets->count(in.id()) > 0;
      }
      any = any || wanted[i];
    }
    if (!any) continue;

    std::vector<Tensor> input_grads = n->backward(g, wanted);
    for (std::size_t i = 0; i < inputs.size(); ++i) {
      if (!wanted[i] || i >= input_grads.size() || !input_grads[i].defined()) continue;
      const Tensor& in = inputs[i];
      if (input_grads[i].shape() != in.shape()) {
        throw DimensionError(std::string("backward of ") + std::string(n->name()) +
                             " produced gradient " + shape_str(input_grads[i].shape()) +
                             " for input " + shape_str(in.shape()));
      }
      if (in.node()) {
        Tensor& slot = node_grads[in.node().get()];
        slot = accumulate(slot, input_grads[i]);
      } else {
        Tensor& slot = result.grads[in.id()];
        slot = accumulate(slot, input_grads[i]);
        result.leaves.emplace(in.id(), in);
      }
    }
  }
  return result;
}

}  // namespace

bool grad_mode_enabled() { return t_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }

GradModeGuard::GradModeGuard(bool enabled) : previous_(t_grad_enabled) {
  t_grad_enabled = enabled;
}
GradModeGuard::~GradModeGuard() { t_grad_enabled = previous_; }

void set_debug_checks(bool on) { g_debug_checks.store(on, std::memory_order_relaxed); }
bool debug_checks_enabled() { return g_debug_checks.load(std::memory_order_relaxed); }

bool should_record(std::initializer_list<const Tensor*> inputs) {
  if (!t_grad_enabled) return false;
  for (const Tensor* t : inputs) {
    if (t->requires_grad()) return true;
  }
  return false;
}

bool should_record(std::span<const Tensor> inputs) {
  if (!t_grad_enabled) return false;
  for (const Tensor& t : inputs) {
    if (t.requires_grad()) return true;
  }
  return false;
}

void backward(const Tensor& output, bool create_graph) {
  if (!output.defined() || output.numel() != 1) {
    throw ContractError("backward() needs a single-element output, got shape " +
                        (output.defined() ? shape_str(output.shape()) : std::string("<undefined>")));
  }
  if (!output.requires_grad()) {
    throw ContractError("backward() on a tensor with no recorded graph");
  }
  if (!output.node()) {
    Tensor leaf = output;
    Tensor g = Tensor::ones(output.shape());
    leaf.set_grad(leaf.grad().defined() ? ops::add(leaf.grad().detach(), g) : g);
    return;
  }
  Propagation p = propagate(output, nullptr, create_graph);
  for (auto& [id, leaf_ref] : p.leaves) {
    Tensor leaf = leaf_ref;
    Tensor g = p.grads[id];
    if (!create_graph && g.requires_grad()) g = g.detach();
    if (leaf.grad().defined()) {
      NoGradGuard guard;
      g = ops::add(leaf.grad(), g);
    }
    leaf.set_grad(std::move(g));
  }
}

std::vector<Tensor> grad(const Tensor& output, std::span<const Tensor> inputs, bool create_graph) {
  if (!output.defined() || output.numel() != 1) {
    throw ContractError("grad() needs a single-element output");
  }
  std::vector<Tensor> out;
  out.reserve(inputs.size());
  if (!output.requires_grad()) {
    for (const Tensor& in : inputs) out.push_back(Tensor::zeros(in.shape()));
    return out;
  }
  std::unordered_set<const void*> targets;
  for (const Tensor& in : inputs) targets.insert(in.id());

  Propagation p;
  if (output.node()) {
    p = propagate(output, &targets, create_graph);
  } else {
    p.grads[output.id()] = Tensor::ones(output.shape());
  }
  for (const Tensor& in : inputs) {
    auto it = p.grads.find(in.id());
    if (it == p.grads.end() || !it->second.defined()) {
      out.push_back(Tensor::zeros(in.shape()));
    } else {
      out.push_back(it->second);
    }
  }
  return out;
}

std::vector<Tensor> grad_of_grad(const Tensor& objective, std::span<const Tensor> first_order_wrt,
                                 const std::function<Tensor(const std::vector<Tensor>&)>& build,
                                 std::span<const Tensor> leaves) {
  if (!grad_mode_enabled()) {
    throw ContractError("grad_of_grad: grad mode is disabled, first-order graph cannot be retained");
  }
  if (!objective.requires_grad()) {
    throw ContractError("grad_of_grad: objective has no recorded graph");
  }
  std::vector<Tensor> first = grad(objective, first_order_wrt, /*create_graph=*/true);
  Tensor s = build(first);
  return grad(s, leaves, /*create_graph=*/false);
}

}  // namespace ccm
