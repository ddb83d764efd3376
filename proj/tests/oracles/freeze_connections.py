"""Symbolic values frozen into test_connections.cpp."""
import sympy as sp
from dconnection_oracle import dricci

x1, x2, y = sp.symbols('x1 x2 y')
X = [x1, x2, y]
pt = {x1: 3 * 2 * sp.pi / 16, x2: 5 * 2 * sp.pi / 16, y: 2 * 2 * sp.pi / 16}

phi = sp.Rational(3, 10) * sp.sin(x1) * sp.sin(x2)
gh = sp.exp(2 * phi) * sp.eye(2)
R, G = dricci(X, 2, gh, sp.Matrix([[1]]), [[0], [0]])
print('conformal')
for name, val in [('L1_11', G[0][0][0]), ('L1_12', G[0][0][1]), ('L2_11', G[1][0][0]),
                  ('R_11', R[0, 0]), ('R_12', R[0, 1]), ('R_22', R[1, 1])]:
    print(f'  {name} = {sp.N(val.subs(pt), 17)}')
hR = sum(gh.inv()[i, j] * R[i, j] for i in range(2) for j in range(2))
print('  hR =', sp.N(hR.subs(pt), 17))
print('  hR closed form -2 exp(-2phi) lap(phi) =',
      sp.N((-2 * sp.exp(-2 * phi) * (sp.diff(phi, x1, 2) + sp.diff(phi, x2, 2))).subs(pt), 17))

gh = sp.diag(1 + sp.Rational(1, 5) * sp.sin(x2), 1 + sp.Rational(1, 10) * sp.cos(y))
gv = sp.Matrix([[1 + sp.Rational(3, 10) * sp.cos(x1) + sp.Rational(1, 5) * sp.sin(y)]])
N = [[sp.Rational(2, 5) * sp.sin(x2) * (1 + sp.Rational(3, 10) * sp.sin(y))], [sp.Rational(3, 10) * sp.cos(x1 + y)]]
R, G = dricci(X, 2, gh, gv, N)
print('anholonomic')
for b in range(3):
    print('  ', [sp.N(R[b, c].subs(pt), 17) for c in range(3)])
