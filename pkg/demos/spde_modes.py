"""How the strip budget h^2 is spread over Fourier modes.

For a spatial regularity s below 2H - 1/2 the mode weights decay fast enough
that a finite number of modes carries almost all of h^2.  This prints the
allocation for a few truncation levels and the remaining tail.

    python demos/spde_modes.py
"""

from fracstrip.bounds import allocate_hk, q_of_s


def main(H=0.75, s=0.3, h=0.2):
    print(f"H={H} s={s} Q(s)={q_of_s(H, s):.6f}")
    for K in (4, 16, 64, 256):
        a = allocate_hk(h, s, H, K=K)
        print(f"K={K:4d}  allocated={a.total:.6e}  tail={a.deficit:.3e}  h^2={h * h:.6e}")


if __name__ == "__main__":
    main()
