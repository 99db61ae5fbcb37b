#pragma once

#include "htrise/bht.hpp"
#include "htrise/dimension_tree.hpp"
#include "htrise/ht_rise.hpp"
#include "htrise/io.hpp"
#include "htrise/metrics.hpp"
#include "htrise/tensor.hpp"
#include "htrise/truncated_svd.hpp"
