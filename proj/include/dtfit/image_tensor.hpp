#pragma once

#include "dtfit/scenes.hpp"
#include "dtfit/tensor.hpp"

namespace dtfit {

template <class S>
Tensor<S> image_to_tensor(const Image& img) {
  std::vector<S> data(img.data.size());
  for (size_t i = 0; i < data.size(); ++i)
    data[i] = static_cast<S>(img.data[i]);
  return Tensor<S>::from_data({img.c, img.h, img.w}, std::move(data));
}

template <class S>
Image tensor_to_image(const Tensor<S>& t) {
  DTFIT_CHECK(t.shape().size() == 3, ShapeError,
              "tensor_to_image: [c,h,w] required");
  Image img(static_cast<int>(t.shape()[0]), static_cast<int>(t.shape()[1]),
            static_cast<int>(t.shape()[2]));
  for (size_t i = 0; i < img.data.size(); ++i)
    img.data[i] = static_cast<float>(t.values()[i]);
  return img;
}

}  // namespace dtfit
