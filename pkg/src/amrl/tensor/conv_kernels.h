/* Patch gather/scatter for 3x3 stride-1 convolution with zero padding 1.
 *
 * x is [C, H, W] row-major float64. cols is [C*9, H*W]: row (c*3+i)*3+j holds
 * x[c, y+i-1, x+j-1] for every output pixel (zero outside the image).
 */
#ifndef AMRL_CONV_KERNELS_H
#define AMRL_CONV_KERNELS_H

#include <stddef.h>
#include <string.h>

static void im2col3(const double *x, double *cols, ptrdiff_t C, ptrdiff_t H, ptrdiff_t W)
{
    const ptrdiff_t HW = H * W;
    for (ptrdiff_t c = 0; c < C; c++)
        for (int i = 0; i < 3; i++)
            for (int j = 0; j < 3; j++) {
                double *dst = cols + ((c * 3 + i) * 3 + j) * HW;
                const int dx = j - 1;
                for (ptrdiff_t y = 0; y < H; y++) {
                    const ptrdiff_t sy = y + i - 1;
                    double *drow = dst + y * W;
                    if (sy < 0 || sy >= H) {
                        memset(drow, 0, W * sizeof(double));
                        continue;
                    }
                    const double *srow = x + (c * H + sy) * W;
                    ptrdiff_t lo = dx < 0 ? 1 : 0, hi = dx > 0 ? W - 1 : W;
                    if (lo) drow[0] = 0.0;
                    if (hi < W) drow[W - 1] = 0.0;
                    memcpy(drow + lo, srow + lo + dx, (hi - lo) * sizeof(double));
                }
            }
}

/* Adjoint of im2col3: accumulates cols back into gx (which is overwritten). */
static void col2im3(const double *cols, double *gx, ptrdiff_t C, ptrdiff_t H, ptrdiff_t W)
{
    const ptrdiff_t HW = H * W;
    memset(gx, 0, C * HW * sizeof(double));
    for (ptrdiff_t c = 0; c < C; c++)
        for (int i = 0; i < 3; i++)
            for (int j = 0; j < 3; j++) {
                const double *src = cols + ((c * 3 + i) * 3 + j) * HW;
                const int dx = j - 1;
                for (ptrdiff_t y = 0; y < H; y++) {
                    const ptrdiff_t sy = y + i - 1;
                    if (sy < 0 || sy >= H) continue;
                    const double *srow = src + y * W;
                    double *grow = gx + (c * H + sy) * W;
                    ptrdiff_t lo = dx < 0 ? 1 : 0, hi = dx > 0 ? W - 1 : W;
                    for (ptrdiff_t k = lo; k < hi; k++) grow[k + dx] += srow[k];
                }
            }
}

#endif
