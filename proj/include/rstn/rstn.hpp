#pragma once

#include "rstn/checkpoint.hpp"
#include "rstn/config.hpp"
#include "rstn/errors.hpp"
#include "rstn/gradcheck.hpp"
#include "rstn/gru.hpp"
#include "rstn/layers.hpp"
#include "rstn/loss.hpp"
#include "rstn/mnist.hpp"
#include "rstn/models.hpp"
#include "rstn/random.hpp"
#include "rstn/sequence_data.hpp"
#include "rstn/stn.hpp"
#include "rstn/tensor.hpp"
#include "rstn/tensor_io.hpp"
#include "rstn/train.hpp"
